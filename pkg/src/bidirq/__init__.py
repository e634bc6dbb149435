"""Bidirectional-time quantum dynamics on finite Krein spaces."""
from bidirq.krein import (
    BlockOperator,
    BlockVector,
    KreinSignature,
    eta_product,
    is_pseudo_hermitian,
    is_pseudounitary,
    pseudo_adjoint,
)
from bidirq.iomap import (
    IOState,
    assemble_input,
    assemble_output,
    expectation,
    io_transform,
    normalize_input,
    solve_two_point,
    star_product,
    two_point_trajectory,
)
from bidirq.dynamics import HamiltonianSpec, Trajectory, conserved_commutant_check, evolve, propagator
from bidirq.scattering import (
    Channel,
    SpectralModel,
    TransitionOperator,
    canonical_form,
    green_function,
    s_matrix,
    transition_operator,
    transition_rate,
    unitarity_defect,
)
from bidirq.models import (
    CouplingConstants,
    VacuumParams,
    boost_w,
    cross_sections,
    decoupling_angle,
    discriminant,
    equalizing_angle,
    vacuum_decay_fit,
    vacuum_expectations,
    vacuum_hamiltonian,
    vacuum_solution,
)

__version__ = "0.1.0"
