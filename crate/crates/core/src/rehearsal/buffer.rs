//! Fixed-capacity reservoir of stored frequency pairs.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use crate::wavelet::FrequencyPair;

/// One stored sample: half-resolution bands as fed to the two branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry<T> {
    /// `[C, h, w]` low-frequency band.
    pub low: Tensor<T>,
    /// `[C, h, w]` high-frequency input after fusion.
    pub high: Tensor<T>,
    pub label: usize,
    /// Classifier output recorded at insertion (DER++ only).
    pub logits: Option<Vec<T>>,
    pub task_id: usize,
}

impl<T: Float> BufferEntry<T> {
    pub fn new(low: Tensor<T>, high: Tensor<T>, label: usize, logits: Option<Vec<T>>, task_id: usize) -> Result<Self> {
        if low.ndim() != 3 || high.ndim() != 3 || low.shape()[1..] != high.shape()[1..] {
            return Err(Error::shape(
                "buffer entry",
                format!("low {:?} and high {:?} must be [C, h, w] with equal spatial dims", low.shape(), high.shape()),
            ));
        }
        Ok(Self { low, high, label, logits, task_id })
    }
}

/// Reservoir sampler over a stream of [`BufferEntry`] values. Capacity is in
/// samples; `seen` counts every offer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: Vec<BufferEntry<T>>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl<T: Float> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[BufferEntry<T>] {
        &self.entries
    }

    /// Offer one item. Returns the slot it landed in, if any.
    pub fn reservoir_offer(&mut self, entry: BufferEntry<T>) -> Option<usize> {
        let slot = if self.entries.len() < self.capacity {
            self.entries.push(entry);
            Some(self.entries.len() - 1)
        } else if self.capacity > 0 {
            // Keep with probability B / (seen + 1).
            let j = self.rng.gen_range(0..=self.seen);
            if (j as usize) < self.capacity {
                self.entries[j as usize] = entry;
                Some(j as usize)
            } else {
                None
            }
        } else {
            None
        };
        self.seen += 1;
        slot
    }

    /// `k` slot indices drawn uniformly with replacement; empty when the
    /// buffer is empty.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| rng.gen_range(0..self.entries.len())).collect()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&BufferEntry<T>> {
        self.sample_indices(k, rng).into_iter().map(|i| &self.entries[i]).collect()
    }

    /// Bytes held by stored tensors and logits.
    pub fn stored_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| (e.low.numel() + e.high.numel() + e.logits.as_ref().map_or(0, Vec::len)) * T::BYTES)
            .sum()
    }

    /// Count of stored entries per class label.
    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for e in &self.entries {
            if e.label < classes {
                h[e.label] += 1;
            }
        }
        h
    }
}

/// Replay samples collated into batched tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch<T> {
    pub pair: FrequencyPair<T>,
    pub labels: Vec<usize>,
    /// `[N, K]` stored logits when every entry carries them.
    pub logits: Option<Tensor<T>>,
}

impl<T: Float> ReplayBatch<T> {
    /// `None` for an empty selection.
    pub fn collate(entries: &[&BufferEntry<T>]) -> Result<Option<Self>> {
        if entries.is_empty() {
            return Ok(None);
        }
        let lows: Vec<&Tensor<T>> = entries.iter().map(|e| &e.low).collect();
        let highs: Vec<&Tensor<T>> = entries.iter().map(|e| &e.high).collect();
        let logits = if entries.iter().all(|e| e.logits.is_some()) {
            let k = entries[0].logits.as_ref().map_or(0, Vec::len);
            let mut data = Vec::with_capacity(k * entries.len());
            for e in entries {
                let l = e.logits.as_ref().expect("checked above");
                if l.len() != k {
                    return Err(Error::shape("replay batch", "stored logits differ in length"));
                }
                data.extend_from_slice(l);
            }
            Some(Tensor::new(&[entries.len(), k], data)?)
        } else {
            None
        };
        Ok(Some(Self {
            pair: FrequencyPair {
                low: Tensor::stack(&lows)?,
                high: Tensor::stack(&highs)?,
            },
            labels: entries.iter().map(|e| e.label).collect(),
            logits,
        }))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

// Snapshot layout (little-endian):
//   magic "FQCLBUF\0", u32 version, u8 element bytes (4 or 8),
//   u64 capacity, u64 seen, u64 entry count,
//   u32 x 3 low shape, u32 x 3 high shape, u32 logit length (0 = none),
//   32-byte rng seed, u64 rng stream, u128 rng word position,
//   then per entry: u32 label, u32 task id, low, high, logits.
const MAGIC: &[u8; 8] = b"FQCLBUF\0";
const VERSION: u32 = 1;

fn put_values<T: Float>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        if T::BYTES == 4 {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("snapshot truncated: need {n} bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn values<T: Float>(&mut self, n: usize, width: usize) -> Result<Vec<T>> {
        let raw = self.take(n * width)?;
        Ok(if width == 4 {
            raw.chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4")) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8"))))
                .collect()
        })
    }

    fn shape(&mut self) -> Result<[usize; 3]> {
        Ok([self.u32()? as usize, self.u32()? as usize, self.u32()? as usize])
    }
}

impl<T: Float> ReplayBuffer<T> {
    /// Serialize entries, counters and reservoir rng state. Values are written
    /// at the buffer's own precision, so the round trip is exact.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        out.extend_from_slice(&(self.capacity as u64).to_le_bytes());
        out.extend_from_slice(&self.seen.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let first = self.entries.first();
        let dims = |t: Option<&Tensor<T>>| -> [u32; 3] {
            t.map_or([0; 3], |t| [t.shape()[0] as u32, t.shape()[1] as u32, t.shape()[2] as u32])
        };
        let logit_len = first.and_then(|e| e.logits.as_ref()).map_or(0, Vec::len);
        for d in dims(first.map(|e| &e.low)).iter().chain(&dims(first.map(|e| &e.high))) {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(logit_len as u32).to_le_bytes());
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        for e in &self.entries {
            let e_logits = e.logits.as_ref().map_or(0, Vec::len);
            if e.low.shape() != first.expect("nonempty").low.shape()
                || e.high.shape() != first.expect("nonempty").high.shape()
                || e_logits != logit_len
            {
                return Err(Error::Contract("snapshot requires uniformly shaped entries".into()));
            }
            out.extend_from_slice(&(e.label as u32).to_le_bytes());
            out.extend_from_slice(&(e.task_id as u32).to_le_bytes());
            put_values(&mut out, e.low.data());
            put_values(&mut out, e.high.data());
            if let Some(l) = &e.logits {
                put_values(&mut out, l);
            }
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut rd = Reader { bytes: &bytes, pos: 0 };
        if rd.take(8)? != MAGIC {
            return Err(Error::Format { offset: 0, message: "not a buffer snapshot".into() });
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format { offset: 8, message: format!("unsupported version {version}") });
        }
        let width = rd.take(1)?[0] as usize;
        if width != 4 && width != 8 {
            return Err(Error::Format { offset: 12, message: format!("bad element width {width}") });
        }
        let capacity = rd.u64()? as usize;
        let seen = rd.u64()?;
        let count = rd.u64()? as usize;
        if count > capacity || count as u64 > seen {
            return Err(Error::Format {
                offset: rd.pos - 8,
                message: format!("{count} entries exceed capacity {capacity} or seen {seen}"),
            });
        }
        let low_shape = rd.shape()?;
        let high_shape = rd.shape()?;
        let logit_len = rd.u32()? as usize;
        let seed: [u8; 32] = rd.array()?;
        let stream = rd.u64()?;
        let word_pos = u128::from_le_bytes(rd.array()?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let low_n: usize = low_shape.iter().product();
        let high_n: usize = high_shape.iter().product();
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let label = rd.u32()? as usize;
            let task_id = rd.u32()? as usize;
            let low = Tensor::new(&low_shape, rd.values(low_n, width)?)?;
            let high = Tensor::new(&high_shape, rd.values(high_n, width)?)?;
            let logits = if logit_len > 0 { Some(rd.values(logit_len, width)?) } else { None };
            entries.push(BufferEntry::new(low, high, label, logits, task_id)?);
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format { offset: rd.pos, message: "trailing bytes".into() });
        }
        Ok(Self { capacity, entries, seen, rng })
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_snapshot(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        Self::read_snapshot(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: f32, label: usize) -> BufferEntry<f32> {
        BufferEntry::new(
            Tensor::full(&[3, 2, 2], v),
            Tensor::full(&[3, 2, 2], -v),
            label,
            Some(vec![v, 2.0 * v]),
            0,
        )
        .unwrap()
    }

    #[test]
    fn underfull_keeps_everything() {
        let mut b = ReplayBuffer::new(2, 0);
        b.reservoir_offer(entry(1.0, 0));
        b.reservoir_offer(entry(2.0, 1));
        assert_eq!(b.len(), 2);
        assert_eq!(b.seen(), 2);
    }

    #[test]
    fn zero_capacity_counts_but_stores_nothing() {
        let mut b = ReplayBuffer::new(0, 0);
        assert_eq!(b.reservoir_offer(entry(1.0, 0)), None);
        assert_eq!((b.len(), b.seen()), (0, 1));
        assert!(b.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
    }

    #[test]
    fn single_entry_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(5, 0);
        b.reservoir_offer(entry(1.0, 3));
        let batch = b.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|e| e.label == 3));
    }

    #[test]
    fn mismatched_bands_rejected() {
        let r = BufferEntry::<f32>::new(Tensor::zeros(&[3, 2, 2]), Tensor::zeros(&[3, 4, 4]), 0, None, 0);
        assert!(r.is_err());
    }

    #[test]
    fn collate_stacks_and_keeps_logits() {
        let mut b = ReplayBuffer::new(4, 0);
        b.reservoir_offer(entry(1.0, 0));
        b.reservoir_offer(entry(2.0, 1));
        let refs: Vec<_> = b.entries().iter().collect();
        let batch = ReplayBatch::collate(&refs).unwrap().unwrap();
        assert_eq!(batch.pair.low.shape(), &[2, 3, 2, 2]);
        assert_eq!(batch.logits.unwrap().data(), &[1.0, 2.0, 2.0, 4.0]);
        assert!(ReplayBatch::<f32>::collate(&[]).unwrap().is_none());
    }

    #[test]
    fn snapshot_round_trip_continues_the_same_stream() {
        let mut a = ReplayBuffer::new(3, 7);
        for i in 0..10 {
            a.reservoir_offer(entry(i as f32 * 0.37, i % 4));
        }
        let mut bytes = Vec::new();
        a.write_snapshot(&mut bytes).unwrap();
        let mut b = ReplayBuffer::<f32>::read_snapshot(&bytes[..]).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert_eq!((a.seen(), a.capacity()), (b.seen(), b.capacity()));
        for i in 10..30 {
            assert_eq!(a.reservoir_offer(entry(i as f32, 0)), b.reservoir_offer(entry(i as f32, 0)));
        }
        bytes.pop();
        assert!(matches!(ReplayBuffer::<f32>::read_snapshot(&bytes[..]), Err(Error::Format { .. })));
    }
}
