//! Stream labelled subbands through a reservoir buffer, sample a replay
//! batch, and round-trip the buffer through a snapshot.

use freqcl::rehearsal::{BufferEntry, ReplayBatch, ReplayBuffer};
use freqcl::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> freqcl::Result<()> {
    let mut buffer = ReplayBuffer::<f32>::new(20, 7);
    for i in 0..1000 {
        let low = Tensor::full(&[3, 4, 4], i as f32);
        let high = Tensor::full(&[1, 4, 4], -(i as f32));
        buffer.reservoir_offer(BufferEntry::new(low, high, i % 10, None, i / 500)?);
    }
    println!("seen {}, stored {}, {} bytes", buffer.seen(), buffer.len(), buffer.stored_bytes());
    println!("class histogram {:?}", buffer.class_histogram(10));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let picked = buffer.sample_batch(8, &mut rng);
    let batch = ReplayBatch::collate(&picked)?.expect("buffer is not empty");
    println!("replay low {:?}, high {:?}, labels {:?}", batch.pair.low.shape(), batch.pair.high.shape(), batch.labels);

    let mut bytes = Vec::new();
    buffer.write_snapshot(&mut bytes)?;
    let restored = ReplayBuffer::<f32>::read_snapshot(bytes.as_slice())?;
    println!("snapshot {} bytes, restored seen {}, identical entries: {}", bytes.len(), restored.seen(), restored.entries() == buffer.entries());
    Ok(())
}
