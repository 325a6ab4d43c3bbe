//! CSS code construction: bivariate bicycle and hypergraph product codes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::{quotient_basis, BitMatrix, BitVector};

/// How a code was built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeOrigin {
    Bb(BbParams),
    Hgp(HgpParams),
    Explicit,
}

/// A CSS code with commuting checks and a canonical logical basis.
///
/// Logical bases are paired so that `lx · lzᵀ = I_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CssCode {
    hx: BitMatrix,
    hz: BitMatrix,
    lx: BitMatrix,
    lz: BitMatrix,
    k: usize,
    origin: CodeOrigin,
}

/// Why a point of a search space does not yield a usable code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    /// Both group-algebra elements are zero.
    ZeroPolynomials,
    /// The code encodes no logical qubits.
    NoLogicalQubits,
}

/// Outcome of a construction: invalid points are ordinary values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Candidate {
    Valid(CssCode),
    Invalid(InvalidReason),
}

impl Candidate {
    pub fn valid(self) -> Option<CssCode> {
        match self {
            Candidate::Valid(c) => Some(c),
            Candidate::Invalid(_) => None,
        }
    }

    pub fn as_valid(&self) -> Option<&CssCode> {
        match self {
            Candidate::Valid(c) => Some(c),
            Candidate::Invalid(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Candidate::Valid(_))
    }
}

impl CssCode {
    /// Validates `hx · hzᵀ = 0`, computes `k` and the logical bases.
    pub fn new(hx: BitMatrix, hz: BitMatrix, origin: CodeOrigin) -> Result<Candidate> {
        if hx.cols() != hz.cols() {
            return Err(Error::DimensionMismatch { op: "css", left: (hx.rows(), hx.cols()), right: (hz.rows(), hz.cols()) });
        }
        if !hx.mat_mul(&hz.transpose())?.is_zero() {
            return Err(Error::InconsistentCode("X and Z checks do not commute".into()));
        }
        let n = hx.cols();
        let k = n - hx.rank() - hz.rank();
        if k == 0 {
            return Ok(Candidate::Invalid(InvalidReason::NoLogicalQubits));
        }
        let (lx, lz) = logical_bases(&hx, &hz)?;
        debug_assert_eq!(lx.rows(), k);
        Ok(Candidate::Valid(CssCode { hx, hz, lx, lz, k, origin }))
    }

    pub fn hx(&self) -> &BitMatrix {
        &self.hx
    }

    pub fn hz(&self) -> &BitMatrix {
        &self.hz
    }

    pub fn lx(&self) -> &BitMatrix {
        &self.lx
    }

    pub fn lz(&self) -> &BitMatrix {
        &self.lz
    }

    pub fn n(&self) -> usize {
        self.hx.cols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n() as f64
    }

    pub fn origin(&self) -> &CodeOrigin {
        &self.origin
    }

    /// Re-checks every structural invariant; used by validation sweeps.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::InconsistentCode(String::from(what)));
        if !self.hx.mat_mul(&self.hz.transpose())?.is_zero() {
            return fail("hx hz^T != 0");
        }
        if self.k != self.n() - self.hx.rank() - self.hz.rank() {
            return fail("k disagrees with rank formula");
        }
        if !self.hx.mat_mul(&self.lz.transpose())?.is_zero() {
            return fail("hx lz^T != 0");
        }
        if !self.hz.mat_mul(&self.lx.transpose())?.is_zero() {
            return fail("hz lx^T != 0");
        }
        if self.lx.mat_mul(&self.lz.transpose())? != BitMatrix::identity(self.k) {
            return fail("lx lz^T != I");
        }
        for r in 0..self.k {
            if self.hz.in_row_space(&self.lz.row(r)) {
                return fail("logical Z row lies in the Z stabilizer space");
            }
            if self.hx.in_row_space(&self.lx.row(r)) {
                return fail("logical X row lies in the X stabilizer space");
            }
        }
        Ok(())
    }

    /// The same code with qubit `j` moved to position `perm[j]`.
    pub fn permute_qubits(&self, perm: &[usize]) -> CssCode {
        assert_eq!(perm.len(), self.n());
        let permute = |m: &BitMatrix| {
            let mut out = BitMatrix::zeros(m.rows(), m.cols());
            for r in 0..m.rows() {
                for c in m.row_ones(r) {
                    out.set(r, perm[c], true);
                }
            }
            out
        };
        CssCode {
            hx: permute(&self.hx),
            hz: permute(&self.hz),
            lx: permute(&self.lx),
            lz: permute(&self.lz),
            k: self.k,
            origin: CodeOrigin::Explicit,
        }
    }
}

/// Logical bases `(lx, lz)` with `lx · lzᵀ = I_k`.
///
/// `lz` spans `ker(hx) / row(hz)` and `lx` spans `ker(hz) / row(hx)`; the
/// pairing is made canonical by a change of basis on `lx`.
pub fn logical_bases(hx: &BitMatrix, hz: &BitMatrix) -> Result<(BitMatrix, BitMatrix)> {
    let n = hx.cols();
    let lz_rows = quotient_basis(&hx.kernel_basis(), hz)?;
    let lx_rows = quotient_basis(&hz.kernel_basis(), hx)?;
    if lz_rows.len() != lx_rows.len() {
        return Err(Error::InconsistentCode(format!(
            "homology dimensions differ: {} vs {}",
            lz_rows.len(),
            lx_rows.len()
        )));
    }
    let lz = BitMatrix::from_rows_with_cols(&lz_rows, n)?;
    let lx = BitMatrix::from_rows_with_cols(&lx_rows, n)?;
    let pairing = lx.mat_mul(&lz.transpose())?;
    let change = pairing
        .inverse()
        .ok_or_else(|| Error::InconsistentCode("logical pairing matrix is singular".into()))?;
    Ok((change.mat_mul(&lx)?, lz))
}

/// `r × r` cyclic shift raised to `power`: row `i` has its one at column `(i + power) mod r`.
pub fn circulant(r: usize, power: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(r, r);
    for i in 0..r {
        m.set(i, (i + power) % r, true);
    }
    m
}

/// Parameters of a bivariate bicycle code over `Z_ell × Z_m`.
///
/// `bits` is `b(a) ∥ b(b)`; each half has `ell + m - 1` coefficients:
/// position 0 is the identity, positions `1..ell` are `x^1..x^{ell-1}` and
/// positions `ell..ell+m-1` are `y^1..y^{m-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BbParams {
    pub ell: usize,
    pub m: usize,
    pub bits: BitVector,
}

/// A pure monomial `x^i` or `y^j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monomial {
    One,
    X(usize),
    Y(usize),
}

impl BbParams {
    pub fn new(ell: usize, m: usize, bits: BitVector) -> Result<Self> {
        if ell == 0 || m == 0 {
            return Err(Error::Config("cyclic orders must be positive".into()));
        }
        if bits.len() != Self::dimension(ell, m) {
            return Err(Error::Config(format!(
                "expected {} bits for (ell, m) = ({ell}, {m}), got {}",
                Self::dimension(ell, m),
                bits.len()
            )));
        }
        Ok(Self { ell, m, bits })
    }

    /// Length of the search vector, `2 (ell + m - 1)`.
    pub fn dimension(ell: usize, m: usize) -> usize {
        2 * (ell + m - 1)
    }

    /// Builds parameters from two polynomials written as monomial lists.
    pub fn from_monomials(ell: usize, m: usize, a: &[Monomial], b: &[Monomial]) -> Result<Self> {
        let half = ell + m - 1;
        let mut bits = BitVector::zeros(2 * half);
        for (offset, poly) in [(0, a), (half, b)] {
            for &mono in poly {
                let idx = match mono {
                    Monomial::One | Monomial::X(0) | Monomial::Y(0) => 0,
                    Monomial::X(i) if i < ell => i,
                    Monomial::Y(j) if j < m => ell + j - 1,
                    other => return Err(Error::Config(format!("monomial {other:?} out of range for ({ell}, {m})"))),
                };
                bits.flip(offset + idx);
            }
        }
        Self::new(ell, m, bits)
    }

    /// Parses `"x^3 + y + y^2"` style polynomials (pure powers only).
    pub fn from_polynomials(ell: usize, m: usize, a: &str, b: &str) -> Result<Self> {
        let a = parse_polynomial(a)?;
        let b = parse_polynomial(b)?;
        Self::from_monomials(ell, m, &a, &b)
    }

    fn monomial(&self, idx: usize) -> Monomial {
        if idx == 0 {
            Monomial::One
        } else if idx < self.ell {
            Monomial::X(idx)
        } else {
            Monomial::Y(idx - self.ell + 1)
        }
    }

    /// The monomials present in `a` (`second = false`) or `b`.
    pub fn terms(&self, second: bool) -> Vec<Monomial> {
        let half = self.ell + self.m - 1;
        let offset = if second { half } else { 0 };
        (0..half).filter(|&i| self.bits.get(offset + i)).map(|i| self.monomial(i)).collect()
    }
}

fn parse_polynomial(text: &str) -> Result<Vec<Monomial>> {
    let mut out = Vec::new();
    for term in text.split('+').map(str::trim).filter(|t| !t.is_empty()) {
        let bad = || Error::Parse(format!("cannot parse monomial {term:?}"));
        if term == "1" {
            out.push(Monomial::One);
            continue;
        }
        let (var, rest) = term.split_at(1);
        let power = match rest.trim_start_matches('^') {
            "" => 1,
            p => p.parse::<usize>().map_err(|_| bad())?,
        };
        out.push(match var {
            "x" => Monomial::X(power),
            "y" => Monomial::Y(power),
            _ => return Err(bad()),
        });
    }
    Ok(out)
}

/// Matrix of a group-algebra element over `Z_ell × Z_m`, as a sum of
/// `S_ell^i ⊗ I_m` and `I_ell ⊗ S_m^j` blocks.
fn group_algebra_matrix(ell: usize, m: usize, terms: &[Monomial]) -> BitMatrix {
    let size = ell * m;
    let mut out = BitMatrix::zeros(size, size);
    for &t in terms {
        let (dx, dy) = match t {
            Monomial::One => (0, 0),
            Monomial::X(i) => (i, 0),
            Monomial::Y(j) => (0, j),
        };
        for a in 0..ell {
            for b in 0..m {
                let row = a * m + b;
                let col = ((a + dx) % ell) * m + (b + dy) % m;
                let cur = out.get(row, col);
                out.set(row, col, !cur);
            }
        }
    }
    out
}

/// Check matrices `hx = [A | B]`, `hz = [Bᵀ | Aᵀ]` of a bivariate bicycle code.
pub fn bb_checks(p: &BbParams) -> (BitMatrix, BitMatrix) {
    let a = group_algebra_matrix(p.ell, p.m, &p.terms(false));
    let b = group_algebra_matrix(p.ell, p.m, &p.terms(true));
    let hx = a.hstack(&b).expect("square blocks of equal size");
    let hz = b.transpose().hstack(&a.transpose()).expect("square blocks of equal size");
    (hx, hz)
}

/// Builds the bivariate bicycle code of `p`.
pub fn bb_from_bits(p: &BbParams) -> Candidate {
    if p.bits.is_zero() {
        return Candidate::Invalid(InvalidReason::ZeroPolynomials);
    }
    let (hx, hz) = bb_checks(p);
    CssCode::new(hx, hz, CodeOrigin::Bb(p.clone())).expect("bivariate bicycle checks always commute")
}

/// Classical parity checks for a hypergraph product.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HgpParams {
    pub h1: BitMatrix,
    pub h2: BitMatrix,
}

impl HgpParams {
    pub fn new(h1: BitMatrix, h2: BitMatrix) -> Result<Self> {
        if h1.rows() == 0 || h1.cols() == 0 || h2.rows() == 0 || h2.cols() == 0 {
            return Err(Error::Config("hypergraph product inputs must be nonempty".into()));
        }
        Ok(Self { h1, h2 })
    }

    /// `k1 k2 + k1ᵀ k2ᵀ` from the classical kernel dimensions.
    pub fn expected_k(&self) -> usize {
        let k = |h: &BitMatrix| h.cols() - h.rank();
        let kt = |h: &BitMatrix| h.rows() - h.rank();
        k(&self.h1) * k(&self.h2) + kt(&self.h1) * kt(&self.h2)
    }
}

/// Length-`n` cyclic repetition check: row `i` has ones at `i` and `i+1 mod n`.
pub fn cyclic_repetition(n: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(n, n);
    for i in 0..n {
        m.set(i, i, true);
        m.set(i, (i + 1) % n, true);
    }
    m
}

/// Hypergraph product `hx = [H1 ⊗ I | I ⊗ H2ᵀ]`, `hz = [I ⊗ H2 | H1ᵀ ⊗ I]`.
pub fn hgp(p: &HgpParams) -> Candidate {
    let (m1, n1) = (p.h1.rows(), p.h1.cols());
    let (m2, n2) = (p.h2.rows(), p.h2.cols());
    let hx = p
        .h1
        .kron(&BitMatrix::identity(n2))
        .hstack(&BitMatrix::identity(m1).kron(&p.h2.transpose()))
        .expect("block heights agree");
    let hz = BitMatrix::identity(n1)
        .kron(&p.h2)
        .hstack(&p.h1.transpose().kron(&BitMatrix::identity(m2)))
        .expect("block heights agree");
    let candidate = CssCode::new(hx, hz, CodeOrigin::Hgp(p.clone())).expect("hypergraph product checks always commute");
    debug_assert_eq!(candidate.as_valid().map_or(0, CssCode::k), p.expected_k());
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toric(l: usize) -> CssCode {
        let h = cyclic_repetition(l);
        hgp(&HgpParams::new(h.clone(), h).unwrap()).valid().unwrap()
    }

    #[test]
    fn circulant_examples() {
        assert_eq!(circulant(3, 0), BitMatrix::identity(3));
        assert_eq!(circulant(2, 1), BitMatrix::from_dense(&[&[0, 1], &[1, 0]]));
        let s = circulant(4, 1);
        let mut acc = BitMatrix::identity(4);
        for step in 1..=4 {
            acc = acc.mat_mul(&s).unwrap();
            assert_eq!(acc == BitMatrix::identity(4), step == 4);
        }
    }

    #[test]
    fn group_algebra_matches_kronecker_form() {
        let (ell, m) = (4, 3);
        let terms = [Monomial::One, Monomial::X(2), Monomial::Y(1), Monomial::Y(2)];
        let mut expected = BitMatrix::identity(ell * m);
        for t in &terms[1..] {
            let block = match *t {
                Monomial::X(i) => circulant(ell, i).kron(&BitMatrix::identity(m)),
                Monomial::Y(j) => BitMatrix::identity(ell).kron(&circulant(m, j)),
                Monomial::One => unreachable!(),
            };
            for r in 0..ell * m {
                for c in block.row_ones(r) {
                    let cur = expected.get(r, c);
                    expected.set(r, c, !cur);
                }
            }
        }
        assert_eq!(group_algebra_matrix(ell, m, &terms), expected);
    }

    #[test]
    fn identity_elements_give_no_logicals() {
        let p = BbParams::from_monomials(2, 2, &[Monomial::One], &[Monomial::One]).unwrap();
        assert_eq!(p.bits.to_string(), "100100");
        assert_eq!(bb_from_bits(&p), Candidate::Invalid(InvalidReason::NoLogicalQubits));
    }

    #[test]
    fn zero_polynomials_are_invalid() {
        let p = BbParams::new(3, 3, BitVector::zeros(10)).unwrap();
        assert_eq!(bb_from_bits(&p), Candidate::Invalid(InvalidReason::ZeroPolynomials));
    }

    #[test]
    fn gross_code_parameters() {
        let p = BbParams::from_polynomials(12, 6, "x^3 + y + y^2", "y^3 + x + x^2").unwrap();
        let code = bb_from_bits(&p).valid().expect("gross code is valid");
        assert_eq!(code.n(), 144);
        assert_eq!(code.k(), 12);
        code.check_invariants().unwrap();
    }

    #[test]
    fn bb_bit_length_checked() {
        assert!(BbParams::new(6, 3, BitVector::zeros(13)).is_err());
        assert!(BbParams::from_polynomials(6, 3, "x^6", "y").is_err());
        assert!(BbParams::from_polynomials(6, 3, "z", "y").is_err());
    }

    #[test]
    fn toric_codes() {
        let t3 = toric(3);
        assert_eq!((t3.n(), t3.k()), (18, 2));
        t3.check_invariants().unwrap();
        let t4 = toric(4);
        assert_eq!((t4.n(), t4.k()), (32, 2));
        t4.check_invariants().unwrap();
    }

    #[test]
    fn trivial_hgp_is_invalid() {
        let one = BitMatrix::identity(1);
        let p = HgpParams::new(one.clone(), one).unwrap();
        assert_eq!(hgp(&p), Candidate::Invalid(InvalidReason::NoLogicalQubits));
        assert!(HgpParams::new(BitMatrix::zeros(0, 3), BitMatrix::identity(2)).is_err());
    }

    #[test]
    fn kernel_of_hx_contains_hz_rows() {
        let code = toric(3);
        let kernel = BitMatrix::from_rows(&code.hx().kernel_basis()).unwrap();
        for r in 0..code.hz().rows() {
            assert!(kernel.in_row_space(&code.hz().row(r)));
        }
    }

    #[test]
    fn random_bb_codes_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = BbParams::dimension(6, 3);
        let mut valid = 0;
        for _ in 0..200 {
            let bits = BitVector::from_bools(&(0..dim).map(|_| rng.random()).collect::<Vec<bool>>());
            let p = BbParams::new(6, 3, bits).unwrap();
            let c1 = bb_from_bits(&p);
            assert_eq!(c1, bb_from_bits(&p));
            if let Candidate::Valid(code) = c1 {
                assert_eq!(code.n(), 36);
                code.check_invariants().unwrap();
                valid += 1;
            }
        }
        assert!(valid > 50);
    }

    #[test]
    fn random_hgp_k_matches_classical_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut h = BitMatrix::zeros(6, 6);
            for r in 0..6 {
                for c in 0..6 {
                    h.set(r, c, rng.random_bool(0.4));
                }
            }
            let p = HgpParams::new(h.clone(), h).unwrap();
            let expected = p.expected_k();
            match hgp(&p) {
                Candidate::Valid(code) => {
                    assert_eq!(code.k(), expected);
                    code.check_invariants().unwrap();
                }
                Candidate::Invalid(_) => assert_eq!(expected, 0),
            }
        }
    }

    #[test]
    fn non_commuting_checks_rejected() {
        let hx = BitMatrix::from_dense(&[&[1, 0]]);
        let hz = BitMatrix::from_dense(&[&[1, 0]]);
        assert!(matches!(CssCode::new(hx, hz, CodeOrigin::Explicit), Err(Error::InconsistentCode(_))));
    }
}
