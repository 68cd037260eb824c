//! Discrete Laplace-Beltrami operators, Dirichlet solvers, harmonic and
//! normal coordinates, and the Yamabe first-eigenvalue solver.

pub mod cube;
pub mod harmonic;
pub mod shell;
pub mod sparse;
pub mod yamabe;

pub use cube::{
    ball_boundary_values, dirichlet_solve, torus_laplacian, CubeGrid, CubeLaplacian,
    DirichletProblem, DirichletSolution,
};
pub use harmonic::{
    harmonic_coordinates, normal_coordinates, normal_from_gamma, HarmonicCoordinates,
    NormalCoordinates, SolveResolution,
};
pub use shell::{GridMap, GridScalar, ShellGrid};
pub use yamabe::{yamabe_first_eigen, YamabeResult};
