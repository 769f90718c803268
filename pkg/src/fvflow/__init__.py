"""fvflow: finite-volume incompressible flow on unstructured meshes.

The package is organised bottom-up:

mesh      polyhedral meshes, geometry, adjacency
sparse    structurally-symmetric hybrid ELL/CRS matrices
linsolve  Jacobi-preconditioned CG and BiCGStab with stage timing
fvm       fields, boundary conditions, discrete operators
coupling  SIMPLE and PISO pressure-velocity loops
cases     built-in meshes and case presets
config    INI case configuration
fileio    mesh/VTK/CSV readers and writers, line sampling
report    run reports, profiling tables and figures
cli       command-line front end
"""

__version__ = "0.1.0"
