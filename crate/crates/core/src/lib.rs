pub mod lang;
pub mod mop;
pub mod nvm;
pub mod parser;
pub mod patterns;
pub mod value;
pub mod minijs;
pub mod wire;
pub mod muda;
pub mod cli;
