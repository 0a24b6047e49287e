//! The enhancement generators, the discriminators and the acoustic model.

mod acoustic;
mod discriminator;
mod generator;
#[cfg(test)]
mod tests;

pub use acoustic::{argmax_rows, build_acoustic_model, AcousticModel, AcousticModelSpec, CONTEXT_RADIUS};
pub use discriminator::{
    build_compact_discriminator, build_discriminator, build_large_discriminator, Discriminator,
    DiscriminatorKind, DiscriminatorSpec, LARGE_FIRST_KERNEL, MIN_WINDOW,
};
pub use generator::{
    build_ed_generator, build_fc_generator, build_generator, ed_encoder_lengths, enhance,
    Generator, GeneratorKind, GeneratorSpec, ED_KERNELS_DEC, ED_KERNELS_ENC, ED_MULTIPLE,
};

use crate::nn::{Module, ParamSet};
use crate::tensor::Real;

macro_rules! impl_module {
    ($($ty:ident),*) => {$(
        impl<T: Real> Module<T> for $ty<T> {
            fn params(&self) -> &ParamSet<T> {
                &self.params
            }
            fn params_mut(&mut self) -> &mut ParamSet<T> {
                &mut self.params
            }
        }
    )*};
}

impl_module!(Generator, Discriminator, AcousticModel);
