//! Stabilizer-tableau simulator (Aaronson–Gottesman), bit-packed by row.
//!
//! Rows `0..n` hold destabilizers, rows `n..2n` stabilizers and row `2n` is
//! scratch space for deterministic measurements. Each row stores its X and Z
//! components as `u64` words plus a sign bit (`true` = -1).
//!
//! Qubit loss is not modelled here. A lost qubit simply stops receiving gates,
//! which is handled by the experiment driver.

use std::fmt;

use rand::Rng;

use crate::error::{check_probability, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn from_index(i: usize) -> Pauli {
        match i & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    pub fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }
}

#[inline]
fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

#[inline]
fn split(q: usize) -> (usize, u64) {
    (q / 64, 1u64 << (q % 64))
}

/// Exponent of `i` (mod 4) picked up when multiplying the Pauli words
/// `(x1, z1) * (x2, z2)` qubit by qubit.
#[inline]
fn product_phase(x1: u64, z1: u64, x2: u64, z2: u64) -> i32 {
    let px = x1 & !z1;
    let py = x1 & z1;
    let pz = !x1 & z1;
    let qx = x2 & !z2;
    let qy = x2 & z2;
    let qz = !x2 & z2;
    let plus = (px & qy) | (py & qz) | (pz & qx);
    let minus = (px & qz) | (py & qx) | (pz & qy);
    plus.count_ones() as i32 - minus.count_ones() as i32
}

/// Hermitian Pauli operator with a ±1 phase.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    xs: Vec<u64>,
    zs: Vec<u64>,
    negative: bool,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        let w = words_for(n);
        PauliString {
            n,
            xs: vec![0; w],
            zs: vec![0; w],
            negative: false,
        }
    }

    pub fn single(n: usize, q: usize, p: Pauli) -> Result<Self> {
        let mut out = Self::identity(n);
        out.set(q, p)?;
        Ok(out)
    }

    /// Builds a string from `(qubit, Pauli)` pairs.
    pub fn from_terms(n: usize, terms: &[(usize, Pauli)]) -> Result<Self> {
        let mut out = Self::identity(n);
        for &(q, p) in terms {
            out.set(q, p)?;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    pub fn negated(mut self) -> Self {
        self.negative = !self.negative;
        self
    }

    pub fn set(&mut self, q: usize, p: Pauli) -> Result<()> {
        if q >= self.n {
            return Err(Error::QubitOutOfRange {
                qubit: q,
                n: self.n,
            });
        }
        let (w, m) = split(q);
        let (x, z) = p.bits();
        self.xs[w] = if x { self.xs[w] | m } else { self.xs[w] & !m };
        self.zs[w] = if z { self.zs[w] | m } else { self.zs[w] & !m };
        Ok(())
    }

    pub fn get(&self, q: usize) -> Pauli {
        let (w, m) = split(q);
        Pauli::from_bits(self.xs[w] & m != 0, self.zs[w] & m != 0)
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let mut acc = 0u32;
        for w in 0..self.xs.len() {
            acc ^= ((self.xs[w] & other.zs[w]) ^ (self.zs[w] & other.xs[w])).count_ones();
        }
        acc % 2 == 0
    }
}

impl std::str::FromStr for PauliString {
    type Err = Error;

    /// Parses strings such as `"+XZ_Y"` or `"-ZZ"`; `_` and `I` mean identity.
    fn from_str(s: &str) -> Result<Self> {
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let mut out = PauliString::identity(body.len());
        out.negative = negative;
        for (q, c) in body.chars().enumerate() {
            let p = match c {
                '_' | 'I' => Pauli::I,
                'X' => Pauli::X,
                'Y' => Pauli::Y,
                'Z' => Pauli::Z,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "bad Pauli character {other:?}"
                    )))
                }
            };
            out.set(q, p)?;
        }
        Ok(out)
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.negative { "-" } else { "+" })?;
        for q in 0..self.n {
            f.write_str(match self.get(q) {
                Pauli::I => "_",
                Pauli::X => "X",
                Pauli::Y => "Y",
                Pauli::Z => "Z",
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    H(usize),
    S(usize),
    Cx(usize, usize),
    X(usize),
    Y(usize),
    Z(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CliffordKind {
    H,
    S,
    Cx,
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    /// Uniformly random non-identity single-qubit Pauli.
    Depolarize1,
    /// Uniformly random non-identity two-qubit Pauli (15 options).
    Depolarize2,
    /// Bit flip.
    FlipX,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Measurement {
    /// `true` for the -1 eigenvalue.
    pub outcome: bool,
    pub deterministic: bool,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Tableau {
    n: usize,
    words: usize,
    xs: Vec<u64>,
    zs: Vec<u64>,
    signs: Vec<bool>,
}

impl fmt::Debug for Tableau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tableau")
            .field("n", &self.n)
            .field("stabilizers", &self.stabilizers())
            .finish()
    }
}

impl Tableau {
    /// `n`-qubit register in `|0…0⟩`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyRegister);
        }
        let words = words_for(n);
        let rows = 2 * n + 1;
        let mut t = Tableau {
            n,
            words,
            xs: vec![0; rows * words],
            zs: vec![0; rows * words],
            signs: vec![false; rows],
        };
        for q in 0..n {
            let (w, m) = split(q);
            t.xs[q * words + w] |= m;
            t.zs[(n + q) * words + w] |= m;
        }
        Ok(t)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    fn check(&self, q: usize) -> Result<()> {
        if q < self.n {
            Ok(())
        } else {
            Err(Error::QubitOutOfRange {
                qubit: q,
                n: self.n,
            })
        }
    }

    fn row_string(&self, r: usize) -> PauliString {
        let w = self.words;
        PauliString {
            n: self.n,
            xs: self.xs[r * w..(r + 1) * w].to_vec(),
            zs: self.zs[r * w..(r + 1) * w].to_vec(),
            negative: self.signs[r],
        }
    }

    pub fn stabilizers(&self) -> Vec<PauliString> {
        (self.n..2 * self.n).map(|r| self.row_string(r)).collect()
    }

    pub fn destabilizers(&self) -> Vec<PauliString> {
        (0..self.n).map(|r| self.row_string(r)).collect()
    }

    pub fn apply(&mut self, gate: Gate) -> Result<()> {
        match gate {
            Gate::H(q) => {
                self.check(q)?;
                self.h(q);
            }
            Gate::S(q) => {
                self.check(q)?;
                self.s(q);
            }
            Gate::Cx(c, t) => {
                self.check(c)?;
                self.check(t)?;
                if c == t {
                    return Err(Error::DuplicateTarget(c));
                }
                self.cx(c, t);
            }
            Gate::X(q) => {
                self.check(q)?;
                self.pauli(q, Pauli::X);
            }
            Gate::Y(q) => {
                self.check(q)?;
                self.pauli(q, Pauli::Y);
            }
            Gate::Z(q) => {
                self.check(q)?;
                self.pauli(q, Pauli::Z);
            }
        }
        Ok(())
    }

    /// Applies `kind` to `targets` (two targets for CX, one otherwise).
    pub fn apply_clifford(&mut self, kind: CliffordKind, targets: &[usize]) -> Result<()> {
        let arity = if kind == CliffordKind::Cx { 2 } else { 1 };
        if targets.len() != arity {
            return Err(Error::InvalidParameter(format!(
                "{kind:?} takes {arity} target(s), got {}",
                targets.len()
            )));
        }
        let gate = match kind {
            CliffordKind::H => Gate::H(targets[0]),
            CliffordKind::S => Gate::S(targets[0]),
            CliffordKind::Cx => Gate::Cx(targets[0], targets[1]),
            CliffordKind::X => Gate::X(targets[0]),
            CliffordKind::Y => Gate::Y(targets[0]),
            CliffordKind::Z => Gate::Z(targets[0]),
        };
        self.apply(gate)
    }

    pub(crate) fn h(&mut self, q: usize) {
        let (w, m) = split(q);
        for r in 0..2 * self.n {
            let i = r * self.words + w;
            let x = self.xs[i] & m;
            let z = self.zs[i] & m;
            if x != 0 && z != 0 {
                self.signs[r] = !self.signs[r];
            }
            if (x != 0) != (z != 0) {
                self.xs[i] ^= m;
                self.zs[i] ^= m;
            }
        }
    }

    pub(crate) fn s(&mut self, q: usize) {
        let (w, m) = split(q);
        for r in 0..2 * self.n {
            let i = r * self.words + w;
            let x = self.xs[i] & m;
            if x != 0 {
                if self.zs[i] & m != 0 {
                    self.signs[r] = !self.signs[r];
                }
                self.zs[i] ^= m;
            }
        }
    }

    pub(crate) fn cx(&mut self, c: usize, t: usize) {
        let (wc, mc) = split(c);
        let (wt, mt) = split(t);
        for r in 0..2 * self.n {
            let base = r * self.words;
            let xc = self.xs[base + wc] & mc != 0;
            let zt = self.zs[base + wt] & mt != 0;
            if xc {
                let xt = self.xs[base + wt] & mt != 0;
                let zc = self.zs[base + wc] & mc != 0;
                if zt && (xt == zc) {
                    self.signs[r] = !self.signs[r];
                }
                self.xs[base + wt] ^= mt;
            }
            if zt {
                self.zs[base + wc] ^= mc;
            }
        }
    }

    /// Conjugates by a single-qubit Pauli (flips the sign of anticommuting rows).
    pub(crate) fn pauli(&mut self, q: usize, p: Pauli) {
        let (w, m) = split(q);
        let (px, pz) = p.bits();
        for r in 0..2 * self.n {
            let i = r * self.words + w;
            let anti = (px && self.zs[i] & m != 0) != (pz && self.xs[i] & m != 0);
            if anti {
                self.signs[r] = !self.signs[r];
            }
        }
    }

    pub fn apply_pauli(&mut self, q: usize, p: Pauli) -> Result<()> {
        self.check(q)?;
        if p != Pauli::I {
            self.pauli(q, p);
        }
        Ok(())
    }

    fn row_anticommutes(&self, r: usize, p: &PauliString) -> bool {
        let base = r * self.words;
        let mut acc = 0u32;
        for w in 0..self.words {
            acc ^= ((self.xs[base + w] & p.zs[w]) ^ (self.zs[base + w] & p.xs[w])).count_ones();
        }
        acc & 1 == 1
    }

    /// `row[target] <- row[source] * row[target]`.
    fn rowsum(&mut self, target: usize, source: usize) {
        let (tb, sb) = (target * self.words, source * self.words);
        let mut exponent = 2 * (self.signs[target] as i32 + self.signs[source] as i32);
        for w in 0..self.words {
            let (x1, z1) = (self.xs[sb + w], self.zs[sb + w]);
            let (x2, z2) = (self.xs[tb + w], self.zs[tb + w]);
            exponent += product_phase(x1, z1, x2, z2);
            self.xs[tb + w] = x1 ^ x2;
            self.zs[tb + w] = z1 ^ z2;
        }
        self.signs[target] = exponent.rem_euclid(4) == 2;
    }

    fn copy_row(&mut self, dst: usize, src: usize) {
        let w = self.words;
        self.xs.copy_within(src * w..(src + 1) * w, dst * w);
        self.zs.copy_within(src * w..(src + 1) * w, dst * w);
        self.signs[dst] = self.signs[src];
    }

    fn clear_row(&mut self, r: usize) {
        let w = self.words;
        self.xs[r * w..(r + 1) * w].fill(0);
        self.zs[r * w..(r + 1) * w].fill(0);
        self.signs[r] = false;
    }

    /// Measures a Hermitian Pauli observable. The returned outcome refers to
    /// the signed operator `p`.
    pub fn measure_pauli<R: Rng + ?Sized>(
        &mut self,
        p: &PauliString,
        rng: &mut R,
    ) -> Result<Measurement> {
        if p.n != self.n {
            return Err(Error::ShapeMismatch(format!(
                "Pauli string on {} qubits measured on a {}-qubit tableau",
                p.n, self.n
            )));
        }
        let n = self.n;
        let pivot = (n..2 * n).find(|&r| self.row_anticommutes(r, p));
        match pivot {
            Some(pv) => {
                for r in 0..2 * n {
                    if r != pv && self.row_anticommutes(r, p) {
                        self.rowsum(r, pv);
                    }
                }
                self.copy_row(pv - n, pv);
                let w = self.words;
                self.xs[pv * w..(pv + 1) * w].copy_from_slice(&p.xs);
                self.zs[pv * w..(pv + 1) * w].copy_from_slice(&p.zs);
                let bit: bool = rng.gen();
                self.signs[pv] = bit;
                Ok(Measurement {
                    outcome: bit ^ p.negative,
                    deterministic: false,
                })
            }
            None => {
                let scratch = 2 * n;
                self.clear_row(scratch);
                for i in 0..n {
                    if self.row_anticommutes(i, p) {
                        self.rowsum(scratch, i + n);
                    }
                }
                Ok(Measurement {
                    outcome: self.signs[scratch] ^ p.negative,
                    deterministic: true,
                })
            }
        }
    }

    pub fn measure_z<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<Measurement> {
        self.check(q)?;
        Ok(self.measure_z_unchecked(q, rng))
    }

    pub(crate) fn measure_z_unchecked<R: Rng + ?Sized>(
        &mut self,
        q: usize,
        rng: &mut R,
    ) -> Measurement {
        let n = self.n;
        let (w, m) = split(q);
        let words = self.words;
        let has_x = |t: &Tableau, r: usize| t.xs[r * words + w] & m != 0;
        match (n..2 * n).find(|&r| has_x(self, r)) {
            Some(pv) => {
                for r in 0..2 * n {
                    if r != pv && has_x(self, r) {
                        self.rowsum(r, pv);
                    }
                }
                self.copy_row(pv - n, pv);
                self.clear_row(pv);
                self.zs[pv * words + w] |= m;
                let bit: bool = rng.gen();
                self.signs[pv] = bit;
                Measurement {
                    outcome: bit,
                    deterministic: false,
                }
            }
            None => {
                let scratch = 2 * n;
                self.clear_row(scratch);
                for i in 0..n {
                    if has_x(self, i) {
                        self.rowsum(scratch, i + n);
                    }
                }
                Measurement {
                    outcome: self.signs[scratch],
                    deterministic: true,
                }
            }
        }
    }

    /// Resets qubit `q` to `|0⟩`.
    pub fn reset_z<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<()> {
        self.check(q)?;
        self.reset_z_unchecked(q, rng);
        Ok(())
    }

    pub(crate) fn reset_z_unchecked<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) {
        if self.measure_z_unchecked(q, rng).outcome {
            self.pauli(q, Pauli::X);
        }
    }

    /// Applies a stochastic Pauli channel with total error probability `p`.
    /// Returns the Pauli(s) actually applied (identity when no error fired).
    pub fn apply_pauli_channel<R: Rng + ?Sized>(
        &mut self,
        channel: Channel,
        p: f64,
        targets: &[usize],
        rng: &mut R,
    ) -> Result<Vec<Pauli>> {
        check_probability(p)?;
        let arity = if channel == Channel::Depolarize2 {
            2
        } else {
            1
        };
        if targets.len() != arity {
            return Err(Error::InvalidParameter(format!(
                "{channel:?} takes {arity} target(s), got {}",
                targets.len()
            )));
        }
        for &q in targets {
            self.check(q)?;
        }
        if arity == 2 && targets[0] == targets[1] {
            return Err(Error::DuplicateTarget(targets[0]));
        }
        let drawn = sample_channel(channel, p, rng);
        for (&q, &pauli) in targets.iter().zip(drawn.iter()) {
            if pauli != Pauli::I {
                self.pauli(q, pauli);
            }
        }
        Ok(drawn[..arity].to_vec())
    }
}

/// Draws the Pauli error of one channel application. Unused trailing slots are
/// identity.
pub fn sample_channel<R: Rng + ?Sized>(channel: Channel, p: f64, rng: &mut R) -> [Pauli; 2] {
    if p <= 0.0 || rng.gen::<f64>() >= p {
        return [Pauli::I, Pauli::I];
    }
    match channel {
        Channel::Depolarize1 => [Pauli::from_index(rng.gen_range(1..4)), Pauli::I],
        Channel::Depolarize2 => {
            let k = rng.gen_range(1..16);
            [Pauli::from_index(k >> 2), Pauli::from_index(k & 3)]
        }
        Channel::FlipX => [Pauli::X, Pauli::I],
    }
}
