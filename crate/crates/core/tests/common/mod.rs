pub mod grad_ops;
pub mod model_grad;
