//! Wire formats: the JSON shapes read and written at the tool boundary.
//!
//! A series travels as `{"n_vars": 2, "max_degree": 6, "polynomial": false,
//! "terms": [{"word": [1, 2], "re": -0.5, "im": 0.0}, ...]}`, the empty word
//! `[]` standing for the constant term. Tuples wrap their components as
//! `{"components": [...]}`; matrices are row-major
//! `{"rows": r, "cols": c, "data": [[re, im], ...]}`.
//!
//! An absent `polynomial` field reads as `false`: coefficients beyond the
//! stored window are then treated as unknown rather than zero, which keeps
//! every downstream tail bound honest for hand-written inputs. Writers
//! always emit the field explicitly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::eval::TupleInstance;
use crate::series::{NCSeries, NCTuple};
use crate::word::Word;

/// One coefficient: the word as 1-based letters, and the value split into
/// real and imaginary parts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermDto {
    pub word: Vec<u8>,
    pub re: f64,
    pub im: f64,
}

/// Wire form of a formal power series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesDto {
    pub n_vars: usize,
    pub max_degree: usize,
    #[serde(default)]
    pub polynomial: bool,
    pub terms: Vec<TermDto>,
}

impl SeriesDto {
    pub fn from_series(s: &NCSeries) -> Self {
        Self {
            n_vars: s.n_vars(),
            max_degree: s.max_degree(),
            polynomial: s.is_polynomial(),
            terms: s
                .terms()
                .map(|(w, c)| TermDto {
                    word: w.letters().to_vec(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
    }

    pub fn to_series(&self) -> Result<NCSeries> {
        // Reject zero letters before constructing any word; words insist on
        // 1-based letters at construction time.
        for t in &self.terms {
            if t.word.contains(&0) {
                return Err(Error::Index(
                    "letter g0 in a term; letters are 1-based".into(),
                ));
            }
        }
        NCSeries::from_terms(
            self.n_vars,
            self.max_degree,
            self.polynomial,
            self.terms.iter().map(|t| {
                (
                    Word::from_letters(&t.word),
                    Complex64::new(t.re, t.im),
                )
            }),
        )
    }
}

/// Wire form of a tuple of series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TupleDto {
    pub components: Vec<SeriesDto>,
}

impl TupleDto {
    pub fn from_tuple(t: &NCTuple) -> Self {
        Self {
            components: t.components().iter().map(SeriesDto::from_series).collect(),
        }
    }

    pub fn to_tuple(&self) -> Result<NCTuple> {
        NCTuple::new(
            self.components
                .iter()
                .map(SeriesDto::to_series)
                .collect::<Result<_>>()?,
        )
    }
}

/// Wire form of a complex matrix, row-major with `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixDto {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixDto {
    pub fn from_matrix(m: &CMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|c| [c.re, c.im]).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        CMatrix::from_row_major(
            self.rows,
            self.cols,
            self.data
                .iter()
                .map(|&[re, im]| Complex64::new(re, im))
                .collect(),
        )
    }
}

/// Wire form of a matrix tuple: one square block per variable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TupleInstanceDto {
    pub components: Vec<MatrixDto>,
}

impl TupleInstanceDto {
    pub fn from_instance(x: &TupleInstance) -> Self {
        Self {
            components: (0..x.len())
                .map(|i| MatrixDto::from_matrix(x.matrix(i)))
                .collect(),
        }
    }

    pub fn to_instance(&self) -> Result<TupleInstance> {
        TupleInstance::new(
            self.components
                .iter()
                .map(MatrixDto::to_matrix)
                .collect::<Result<_>>()?,
        )
    }
}

/// Wire form of a list of scalar points, each a vector of `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointsDto {
    pub points: Vec<Vec<[f64; 2]>>,
}

impl PointsDto {
    pub fn from_points(points: &[Vec<Complex64>]) -> Self {
        Self {
            points: points
                .iter()
                .map(|p| p.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
        }
    }

    pub fn to_points(&self) -> Vec<Vec<Complex64>> {
        self.points
            .iter()
            .map(|p| p.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
            .collect()
    }
}

/// Wire form of a list of square target blocks for interpolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetsDto {
    pub targets: Vec<MatrixDto>,
}

impl TargetsDto {
    pub fn from_targets(targets: &[CMatrix]) -> Self {
        Self {
            targets: targets.iter().map(MatrixDto::from_matrix).collect(),
        }
    }

    pub fn to_targets(&self) -> Result<Vec<CMatrix>> {
        self.targets.iter().map(MatrixDto::to_matrix).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn series_roundtrips_through_the_wire_form() {
        let (p, g) = instances::shear_pair(7);
        for s in p.components().iter().chain(g.components()) {
            let dto = SeriesDto::from_series(s);
            let text = serde_json::to_string(&dto).unwrap();
            let back: SeriesDto = serde_json::from_str(&text).unwrap();
            assert_eq!(&back.to_series().unwrap(), s);
        }
    }

    #[test]
    fn absent_polynomial_flag_reads_as_truncated() {
        let text = r#"{"n_vars": 1, "max_degree": 2,
                       "terms": [{"word": [1], "re": 1.0, "im": 0.0}]}"#;
        let dto: SeriesDto = serde_json::from_str(text).unwrap();
        let s = dto.to_series().unwrap();
        assert!(!s.is_polynomial());
        assert_eq!(s.max_degree(), 2);
    }

    #[test]
    fn empty_word_carries_the_constant_term() {
        let text = r#"{"n_vars": 2, "max_degree": 0, "polynomial": true,
                       "terms": [{"word": [], "re": 2.5, "im": -1.0}]}"#;
        let dto: SeriesDto = serde_json::from_str(text).unwrap();
        let s = dto.to_series().unwrap();
        assert_eq!(s.coeff(&Word::identity()), Complex64::new(2.5, -1.0));
    }

    #[test]
    fn matrix_roundtrips_and_rejects_bad_shapes() {
        let m = CMatrix::from_row_major(
            2,
            2,
            vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, -2.0),
                Complex64::new(3.5, 0.1),
                Complex64::new(0.0, 0.0),
            ],
        )
        .unwrap();
        let dto = MatrixDto::from_matrix(&m);
        let text = serde_json::to_string(&dto).unwrap();
        let back: MatrixDto = serde_json::from_str(&text).unwrap();
        let restored = back.to_matrix().unwrap();
        assert_eq!(restored.data(), m.data());

        let bad = MatrixDto {
            rows: 2,
            cols: 2,
            data: vec![[1.0, 0.0]; 3],
        };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn zero_based_letters_are_rejected() {
        let dto = SeriesDto {
            n_vars: 2,
            max_degree: 3,
            polynomial: true,
            terms: vec![TermDto {
                word: vec![0, 1],
                re: 1.0,
                im: 0.0,
            }],
        };
        assert!(dto.to_series().is_err());
    }

    #[test]
    fn instance_roundtrips_through_the_wire_form() {
        let x = instances::random_tuple_instance(2, 3, 0.5, 31);
        let dto = TupleInstanceDto::from_instance(&x);
        let text = serde_json::to_string(&dto).unwrap();
        let back: TupleInstanceDto = serde_json::from_str(&text).unwrap();
        let restored = back.to_instance().unwrap();
        assert_eq!(restored.len(), x.len());
        for i in 0..x.len() {
            assert_eq!(restored.matrix(i).data(), x.matrix(i).data());
        }
    }
}
