//! Turning domain flags into a [`BoxDomain`].

use std::path::Path;

use lipcert::BoxDomain;
use ndarray::Array1;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::DomainArgs;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum DomainFile {
    Ball { center: Vec<f64>, eps: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// Repeats a single value to `dim` entries; otherwise requires exactly `dim`.
pub fn broadcast(values: &[f64], dim: usize, what: &str) -> CliResult<Array1<f64>> {
    match values.len() {
        1 => Ok(Array1::from_elem(dim, values[0])),
        n if n == dim => Ok(Array1::from(values.to_vec())),
        n => Err(CliError::Input(format!(
            "{what} has {n} values but the model input has dimension {dim}"
        ))),
    }
}

fn ball(center: &[f64], eps: f64, dim: usize) -> CliResult<BoxDomain> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(CliError::Input(format!("eps must be a finite non-negative number, got {eps}")));
    }
    let c = broadcast(center, dim, "center")?;
    Ok(BoxDomain::ball(c.view(), eps)?)
}

fn explicit(lo: &[f64], hi: &[f64], dim: usize) -> CliResult<BoxDomain> {
    Ok(BoxDomain::new(broadcast(lo, dim, "lo")?, broadcast(hi, dim, "hi")?)?)
}

pub fn read_domain_file(path: &Path, dim: usize) -> CliResult<BoxDomain> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let parsed: DomainFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!(
            "{}: expected {{\"center\", \"eps\"}} or {{\"lo\", \"hi\"}}: {e}",
            path.display()
        ))
    })?;
    match parsed {
        DomainFile::Ball { center, eps } => ball(&center, eps, dim),
        DomainFile::Box { lo, hi } => explicit(&lo, &hi, dim),
    }
}

/// Exactly one of ball, box or file must be given.
pub fn resolve(args: &DomainArgs, dim: usize) -> CliResult<BoxDomain> {
    let ball_given = args.center.is_some() || args.eps.is_some();
    let box_given = args.lo.is_some() || args.hi.is_some();
    let file_given = args.domain.is_some();
    if [ball_given, box_given, file_given].iter().filter(|g| **g).count() != 1 {
        return Err(CliError::Input(
            "give exactly one domain: --center/--eps, --lo/--hi, or --domain".into(),
        ));
    }
    if let Some(path) = &args.domain {
        return read_domain_file(path, dim);
    }
    if ball_given {
        let (Some(c), Some(e)) = (&args.center, args.eps) else {
            return Err(CliError::Input("--center and --eps go together".into()));
        };
        return ball(c, e, dim);
    }
    let (Some(lo), Some(hi)) = (&args.lo, &args.hi) else {
        return Err(CliError::Input("--lo and --hi go together".into()));
    };
    explicit(lo, hi, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> DomainArgs {
        DomainArgs {
            center: None,
            eps: None,
            lo: None,
            hi: None,
            domain: None,
        }
    }

    #[test]
    fn ball_broadcasts_center() {
        let d = resolve(
            &DomainArgs {
                center: Some(vec![0.5]),
                eps: Some(0.1),
                ..args()
            },
            3,
        )
        .unwrap();
        assert_eq!(d.lo().to_vec(), vec![0.4; 3]);
        assert_eq!(d.hi().to_vec(), vec![0.6; 3]);
    }

    #[test]
    fn exactly_one_form() {
        assert!(resolve(&args(), 2).is_err());
        let both = DomainArgs {
            center: Some(vec![0.0]),
            eps: Some(0.1),
            lo: Some(vec![0.0]),
            hi: Some(vec![1.0]),
            ..args()
        };
        assert!(resolve(&both, 2).is_err());
        let half = DomainArgs {
            center: Some(vec![0.0]),
            ..args()
        };
        assert!(resolve(&half, 2).is_err());
    }

    #[test]
    fn rejects_negative_eps_and_bad_lengths() {
        let neg = DomainArgs {
            center: Some(vec![0.0]),
            eps: Some(-0.1),
            ..args()
        };
        assert!(resolve(&neg, 2).is_err());
        let wrong = DomainArgs {
            lo: Some(vec![0.0, 0.0, 0.0]),
            hi: Some(vec![1.0]),
            ..args()
        };
        assert!(resolve(&wrong, 2).is_err());
    }

    #[test]
    fn inverted_box_is_an_input_error() {
        let inv = DomainArgs {
            lo: Some(vec![1.0]),
            hi: Some(vec![0.0]),
            ..args()
        };
        assert_eq!(resolve(&inv, 2).unwrap_err().exit_code(), 2);
    }
}
