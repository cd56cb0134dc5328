#![no_main]

use libfuzzer_sys::fuzz_target;
use pocketnet::tensor::npy::{decode, encode};
use pocketnet::tensor::Tensor;

fuzz_target!(|data: &[u8]| {
    if let Ok(array) = decode(data) {
        let tensor: Tensor<f64> = array.into_tensor();
        let again: Tensor<f64> = decode(&encode(&tensor)).unwrap().into_tensor();
        assert_eq!(tensor.shape(), again.shape());
        assert!(tensor.values().iter().zip(again.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});
