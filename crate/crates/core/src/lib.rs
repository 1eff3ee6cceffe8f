pub mod kinematics;
pub mod model;
pub mod workspace;
pub mod posectrl;
pub mod robotctrl;
pub mod walkctrl;
pub mod sim;
pub mod ops;
pub mod api;
pub mod teleop;
