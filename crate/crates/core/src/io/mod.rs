pub mod config;
pub mod image;

pub use config::{BackendSpec, RunConfig};
pub use image::{decode_image, encode_image, load_image, save_image, ImageFormat};
