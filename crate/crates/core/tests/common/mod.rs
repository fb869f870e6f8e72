#![allow(dead_code)]

pub mod cli;
pub mod gradcheck;
pub mod oracles;
