//! Write and parse the CIFAR-10 binary record layout. Pass a directory with
//! the extracted `cifar-10-batches-bin` files to read the real set instead.

use freqcl::data::{encode_cifar10_binary, parse_cifar10_binary, read_cifar10_dir, synthesize_dataset, SyntheticSpec};

fn main() -> freqcl::Result<()> {
    if let Some(dir) = std::env::args().nth(1) {
        let (train, test) = read_cifar10_dir::<f32>(dir.as_ref())?;
        println!("train {} images {:?}, test {}", train.len(), train.image_shape(), test.len());
        return Ok(());
    }
    let spec = SyntheticSpec { classes: 10, samples_per_class: 3, ..SyntheticSpec::default() };
    let data = synthesize_dataset::<f32>(&spec)?;
    let bytes = encode_cifar10_binary(&data)?;
    let back = parse_cifar10_binary::<f32>(&bytes)?;
    println!("{} records, {} bytes, labels {:?}", back.len(), bytes.len(), &back.labels[..10]);

    match parse_cifar10_binary::<f32>(&bytes[..bytes.len() - 100]) {
        Err(e) => println!("truncated file: {e}"),
        Ok(_) => println!("truncated file parsed unexpectedly"),
    }
    Ok(())
}
