pub mod tensor;
pub mod loss;
pub mod morph;
pub mod io;
pub mod quality;
pub mod vuln;
pub mod mad;
