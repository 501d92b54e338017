//! Binary dataset format.
//!
//! Layout: `"QLW1" | u16 version | u16 d | u16 T | u8 basis | f64 p_pauli |
//! f64 p_meas | f64 p_loss | u64 seed | u64 shot_count`, then per shot the
//! volumes in field order. Integers and floats are little-endian. Bits are
//! packed LSB-first; every round of a volume and every vector starts on a
//! byte boundary.

use super::{Dataset, DatasetHeader, NoiseParams, ShotRecord};
use crate::bits::{pack_bits, packed_len, unpack_bits, BitMatrix};
use crate::error::{Error, Result};
use crate::lattice::Basis;

pub const DATASET_MAGIC: [u8; 4] = *b"QLW1";
pub const DATASET_VERSION: u16 = 1;

fn put_matrix(m: &BitMatrix, out: &mut Vec<u8>) {
    for r in 0..m.rows() {
        pack_bits(m.row(r), out);
    }
}

pub fn serialize(dataset: &Dataset) -> Result<Vec<u8>> {
    let h = &dataset.header;
    let small = |v: usize, what: &str| {
        u16::try_from(v)
            .map_err(|_| Error::InvalidParameter(format!("{what} = {v} does not fit in u16")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&small(h.d, "d")?.to_le_bytes());
    out.extend_from_slice(&small(h.rounds, "T")?.to_le_bytes());
    out.push(h.basis.code());
    for p in [h.noise.p_pauli, h.noise.p_meas, h.noise.p_loss] {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.extend_from_slice(&(dataset.shots.len() as u64).to_le_bytes());
    let na = h.d * h.d - 1;
    let nd = h.d * h.d;
    for (i, s) in dataset.shots.iter().enumerate() {
        let shapes_ok = s.ancilla_outcomes.rows() == h.rounds
            && s.ancilla_outcomes.cols() == na
            && s.detectors.rows() == h.rounds + 1
            && s.detectors.cols() == na
            && s.final_readout.len() == nd
            && s.loss_mask_truth.rows() == h.rounds
            && s.loss_mask_truth.cols() == nd
            && s.ancilla_loss_truth.rows() == h.rounds
            && s.ancilla_loss_truth.cols() == na
            && s.logical_labels.len() == h.d
            && s.excluded_observables.len() == h.d;
        if !shapes_ok {
            return Err(Error::ShapeMismatch(format!(
                "shot {i} does not match the header"
            )));
        }
        put_matrix(&s.ancilla_outcomes, &mut out);
        put_matrix(&s.detectors, &mut out);
        pack_bits(s.final_readout.iter().copied(), &mut out);
        put_matrix(&s.loss_mask_truth, &mut out);
        put_matrix(&s.ancilla_loss_truth, &mut out);
        pack_bits(s.logical_labels.iter().copied(), &mut out);
        pack_bits(s.excluded_observables.iter().copied(), &mut out);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn bits(&mut self, n: usize, what: &'static str) -> Result<Vec<bool>> {
        Ok(unpack_bits(self.take(packed_len(n), what)?, n))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &'static str) -> Result<BitMatrix> {
        let mut data = Vec::with_capacity(rows);
        for _ in 0..rows {
            data.push(self.bits(cols, what)?);
        }
        Ok(BitMatrix::from_fn(rows, cols, |r, c| data[r][c]))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Dataset> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = rd.array("magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(rd.array("version")?);
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let d = u16::from_le_bytes(rd.array("header")?) as usize;
    let rounds = u16::from_le_bytes(rd.array("header")?) as usize;
    let [code] = rd.array("header")?;
    let basis =
        Basis::from_code(code).ok_or_else(|| Error::Corrupt(format!("basis code {code}")))?;
    let mut p = [0.0; 3];
    for v in &mut p {
        *v = f64::from_le_bytes(rd.array("header")?);
    }
    let noise = NoiseParams::new(p[0], p[1], p[2]).map_err(|e| Error::Corrupt(e.to_string()))?;
    let seed = u64::from_le_bytes(rd.array("header")?);
    let count = u64::from_le_bytes(rd.array("header")?);
    if d < 2 || rounds == 0 {
        return Err(Error::Corrupt(format!("header d={d} T={rounds}")));
    }
    let na = d * d - 1;
    let nd = d * d;
    let per_shot = rounds * packed_len(na) * 2
        + (rounds + 1) * packed_len(na)
        + packed_len(nd)
        + rounds * packed_len(nd)
        + 2 * packed_len(d);
    let remaining = (bytes.len() - rd.pos) as u64;
    if remaining < count.saturating_mul(per_shot as u64) {
        return Err(Error::Truncated("shot records"));
    }
    let mut shots = Vec::with_capacity(count as usize);
    for _ in 0..count {
        shots.push(ShotRecord {
            basis,
            ancilla_outcomes: rd.matrix(rounds, na, "ancilla outcomes")?,
            detectors: rd.matrix(rounds + 1, na, "detectors")?,
            final_readout: rd.bits(nd, "final readout")?,
            loss_mask_truth: rd.matrix(rounds, nd, "loss mask")?,
            ancilla_loss_truth: rd.matrix(rounds, na, "ancilla loss")?,
            logical_labels: rd.bits(d, "logical labels")?,
            excluded_observables: rd.bits(d, "excluded observables")?,
        });
    }
    if rd.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - rd.pos
        )));
    }
    Ok(Dataset {
        header: DatasetHeader {
            d,
            rounds,
            basis,
            noise,
            seed,
        },
        shots,
    })
}
