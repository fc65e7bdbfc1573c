pub mod agent;
pub mod image;
pub mod lvlm;
pub mod openai;
pub mod prompts;
pub mod stub;
pub mod tags;
pub mod tools;
