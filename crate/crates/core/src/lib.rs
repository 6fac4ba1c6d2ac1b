//! Graph neural networks fitted to noisy Gaussian belief-propagation traces.
//!
//! [`pgm`] samples Gaussian graphical models and bias inputs, [`bp`] runs
//! damped noisy belief propagation on them, and [`gnn`] is a meta-MLP message
//! passing network trained by [`train`] on the resulting traces through the
//! reverse-mode tape in [`diffnn`]. [`analysis`] looks inside trained
//! ensembles, [`translator`] maps learned structure to precision matrices and
//! back, and [`search`] samples architectures.

pub mod analysis;
pub mod bp;
pub mod diffnn;
pub mod gnn;
pub mod pgm;
pub mod rng;
pub mod search;
pub mod train;
pub mod translator;
