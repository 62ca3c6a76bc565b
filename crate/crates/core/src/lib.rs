pub mod diagnostics;
pub mod distributions;
pub mod experiments;
pub mod io;
pub mod multivariate;
pub mod numerics;
pub mod restrictions;
pub mod univariate;
