pub mod auth_tags;
pub mod finite_field;
pub mod ids;
pub mod psk_table;
pub mod secret_sharing;
pub mod wire;
pub mod hub;
pub mod client;
pub mod keystore;
