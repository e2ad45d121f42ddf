//! Power-system component models, network assembly and the bundled cases.

mod cases;
pub mod components;
pub mod data;
pub mod init;
pub mod network;
mod system;

pub use cases::{
    build_case_a, build_case_b, build_case_b_with_fault, build_case_c, load_scenario, Scenario, CASE_A_DATA,
    CASE_B_DATA, CASE_C_DATA,
};
pub use components::{Exciter, Generator, Governor, Motor, MotorConstants, ZipLoad};
pub use init::{init_generator, init_motor, shunt_admittance, GeneratorInit, MotorInit, MotorInitSystem, SLIP_CAP};
pub use system::PowerSystem;
