//! Split an image into Haar subbands, rebuild it, and compare energies.

use freqcl::tensor::Tensor;
use freqcl::wavelet::{dwt2d, idwt2d};

fn main() -> freqcl::Result<()> {
    // A 3x8x8 image with a diagonal ramp and a checkerboard on top.
    let data = (0..3 * 8 * 8)
        .map(|i| {
            let (y, x) = ((i / 8) % 8, i % 8);
            (x + y) as f64 / 14.0 + if (x + y) % 2 == 0 { 0.1 } else { -0.1 }
        })
        .collect();
    let image = Tensor::new(&[3, 8, 8], data)?;

    let quad = dwt2d(&image)?;
    for (name, band) in [("ll", &quad.ll), ("lh", &quad.lh), ("hl", &quad.hl), ("hh", &quad.hh)] {
        let e: f64 = band.data().iter().map(|v| v * v).sum();
        println!("{name} {:?} energy {e:.4}", band.shape());
    }

    let back = idwt2d(&quad)?;
    let err = image.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let energy: f64 = image.data().iter().map(|v| v * v).sum();
    println!("image energy {energy:.4}, subband energy {:.4}", quad.energy());
    println!("max round-trip error {err:.2e}");
    Ok(())
}
