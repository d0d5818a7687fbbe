#![no_main]

use libfuzzer_sys::fuzz_target;
use ranai_core::nn::DenseNet;

// Anything the decoder accepts must re-encode to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(net) = DenseNet::from_bytes(data) {
        assert_eq!(net.to_bytes(), data);
        let x = vec![0.5; net.input_dim()];
        assert_eq!(net.forward(&x).len(), net.output_dim());
    }
});
