use crate::error::{Error, Result};
use crate::linalg::{spectrum, Matrix, SpectrumSummary};

/// Continuous-time plant ẋ = Ax + Bu.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if a.nrows() == 0 {
            return Err(Error::InvalidInput("empty state dimension".into()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B is {}x{} for a {}-state plant",
                b.nrows(),
                b.ncols(),
                a.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite plant entry".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn check_gain(&self, k: &Matrix) -> Result<()> {
        if k.nrows() != self.m() || k.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.m(),
                self.n()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite gain entry".into()));
        }
        Ok(())
    }

    /// A + BK.
    pub fn closed_loop(&self, k: &Matrix) -> Result<Matrix> {
        self.check_gain(k)?;
        Ok(&self.a + &self.b * k)
    }

    /// Spectrum of A + BK, failing unless it is Hurwitz.
    pub fn hurwitz_closed_loop(&self, k: &Matrix) -> Result<(Matrix, SpectrumSummary)> {
        let acl = self.closed_loop(k)?;
        let spec = spectrum(&acl)?;
        if !spec.is_hurwitz {
            return Err(Error::UnstabilizedLoop {
                abscissa: spec.spectral_abscissa(),
            });
        }
        Ok((acl, spec))
    }
}
