"""Section-beam interaction potentials for adhesive slender fibers.

Modules
-------
potentials   point-pair laws and the closed-form section-beam law
beam         cubic Hermite rod elements
kinematics   section-to-master-beam kinematics and their derivatives
assembly     pair search and global assembly of the interaction
solver       quasi-static Newton solver with load-step control
verify       analytic and quadrature reference solutions
scenario     scenario files, mesh generation and runs
cli          command line front end
"""

__version__ = "0.1.0"
