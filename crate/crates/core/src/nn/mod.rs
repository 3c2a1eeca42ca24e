pub mod encoder;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod message;
