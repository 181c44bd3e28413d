//! State files and certificate files.
//!
//! A state file is JSON in one of two forms:
//!
//! ```json
//! {"dims": [2, 2], "ensemble": [{"p": 1.0, "amplitudes": [[1, 0], [0, 0], [0, 0], [0, 0]]}]}
//! {"dims": [2, 2], "density": [[[0.25, 0], ...], ...]}
//! ```
//!
//! Complex numbers are `[re, im]` pairs and amplitudes are in flattened
//! lexicographic order.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::certify::{prepare_tensor, relaxation, Certificate, CertifyOptions, Verdict};
use crate::error::{Error, Result};
use crate::sdp::verify_certificate;
use crate::tensor::{
    density_to_tensor, ensemble_to_tensor, reconstruct, residual, EnsembleTerm, HermitianTensor,
    PartyDims, StateEnsemble, C64,
};

pub fn parse_state_file(path: impl AsRef<Path>) -> Result<(HermitianTensor, PartyDims)> {
    parse_state_str(&fs::read_to_string(path)?)
}

pub fn parse_state_str(text: &str) -> Result<(HermitianTensor, PartyDims)> {
    let doc: Value = serde_json::from_str(text)?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::schema("$", "expected an object"))?;
    let dims = parse_dims(obj.get("dims"))?;
    let h = match (obj.get("ensemble"), obj.get("density")) {
        (Some(e), None) => {
            let terms = parse_ensemble(e, dims.size())?;
            ensemble_to_tensor(&StateEnsemble::new(dims.clone(), terms)?)?
        }
        (None, Some(m)) => density_to_tensor(&parse_density(m, dims.size())?, &dims)?,
        (Some(_), Some(_)) => {
            return Err(Error::schema("$", "give either `ensemble` or `density`, not both"))
        }
        (None, None) => return Err(Error::schema("$", "missing `ensemble` or `density`")),
    };
    Ok((h, dims))
}

/// Serialises a state as an ensemble file.
pub fn ensemble_to_json(ensemble: &StateEnsemble) -> String {
    let terms: Vec<Value> = ensemble
        .terms()
        .iter()
        .map(|t| {
            serde_json::json!({
                "p": t.weight,
                "amplitudes": t.amplitudes.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "dims": ensemble.dims().as_slice(), "ensemble": terms }).to_string()
}

/// Serialises a tensor as a density file.
pub fn density_to_json(h: &HermitianTensor) -> String {
    let rows: Vec<Vec<[f64; 2]>> = h
        .to_rows()
        .iter()
        .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
        .collect();
    serde_json::json!({ "dims": h.dims().as_slice(), "density": rows }).to_string()
}

fn parse_dims(v: Option<&Value>) -> Result<PartyDims> {
    let arr = v
        .ok_or_else(|| Error::schema("dims", "missing"))?
        .as_array()
        .ok_or_else(|| Error::schema("dims", "expected an array of local dimensions"))?;
    let dims = arr
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_u64()
                .filter(|&n| n >= 1)
                .map(|n| n as usize)
                .ok_or_else(|| Error::schema(format!("dims[{i}]"), "expected a positive integer"))
        })
        .collect::<Result<Vec<_>>>()?;
    PartyDims::new(dims).map_err(|e| Error::schema("dims", e.to_string()))
}

fn parse_ensemble(v: &Value, size: usize) -> Result<Vec<EnsembleTerm>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::schema("ensemble", "expected an array of terms"))?;
    arr.iter()
        .enumerate()
        .map(|(i, term)| {
            let path = format!("ensemble[{i}]");
            let obj = term
                .as_object()
                .ok_or_else(|| Error::schema(&path, "expected an object"))?;
            let weight = obj
                .get("p")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::schema(format!("{path}.p"), "expected a number"))?;
            let amps = obj
                .get("amplitudes")
                .ok_or_else(|| Error::schema(format!("{path}.amplitudes"), "missing"))?;
            let amplitudes = parse_vector(amps, &format!("{path}.amplitudes"), size)?;
            Ok(EnsembleTerm { weight, amplitudes })
        })
        .collect()
}

fn parse_density(v: &Value, size: usize) -> Result<Vec<Vec<C64>>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::schema("density", "expected an array of rows"))?;
    if rows.len() != size {
        return Err(Error::schema(
            "density",
            format!("expected {size} rows, found {}", rows.len()),
        ));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| parse_vector(r, &format!("density[{i}]"), size))
        .collect()
}

fn parse_vector(v: &Value, path: &str, size: usize) -> Result<Vec<C64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::schema(path, "expected an array of [re, im] pairs"))?;
    if arr.len() != size {
        return Err(Error::schema(
            path,
            format!("expected {size} entries, found {}", arr.len()),
        ));
    }
    arr.iter()
        .enumerate()
        .map(|(j, z)| parse_complex(z).ok_or_else(|| Error::schema(format!("{path}[{j}]"), "expected [re, im]")))
        .collect()
}

fn parse_complex(v: &Value) -> Option<C64> {
    match v.as_array()?.as_slice() {
        [re, im] => Some(C64::new(re.as_f64()?, im.as_f64()?)),
        _ => None,
    }
}

/// Re-checks a certificate against the tensor it claims to describe,
/// without trusting anything the solver reported.
///
/// Separable: the decomposition is rebuilt and compared with the tensor.
/// NotSeparable: the relaxation is reassembled from the recorded seed and
/// degree and the dual certificate is verified against it. Returns the
/// residual or the margin.
pub fn check_certificate(cert: &Certificate, h: &HermitianTensor) -> Result<f64> {
    let meta = &cert.metadata;
    if meta.dims != h.dims().as_slice() {
        return Err(Error::Unsound(format!(
            "certificate is for dims {:?}, tensor has {:?}",
            meta.dims,
            h.dims().as_slice()
        )));
    }
    let mut options = CertifyOptions::new(meta.mode);
    options.rescale_trace = meta.rescaled;
    let h = prepare_tensor(h, &options)?;
    match &cert.verdict {
        Verdict::Separable { decomposition, .. } => {
            decomposition.validate()?;
            let r = residual(&reconstruct(decomposition, h.dims())?, &h)?;
            if r > meta.residual_tol {
                return Err(Error::Unsound(format!(
                    "decomposition residual {r:e} exceeds {:e}",
                    meta.residual_tol
                )));
            }
            Ok(r)
        }
        Verdict::NotSeparable {
            level_k, certificate, ..
        } => {
            let problem = relaxation(&h, meta, *level_k)?;
            let margin = verify_certificate(&problem, certificate)?;
            if margin <= 0.0 {
                return Err(Error::Unsound(format!(
                    "infeasibility certificate margin {margin:e} is not positive"
                )));
            }
            Ok(margin)
        }
        Verdict::Undetermined { .. } => Ok(0.0),
    }
}

/// Checks the certificate against `h`, then writes it as JSON.
pub fn write_certificate(cert: &Certificate, h: &HermitianTensor, path: impl AsRef<Path>) -> Result<()> {
    check_certificate(cert, h)?;
    fs::write(path, certificate_to_json(cert)?)?;
    Ok(())
}

pub fn certificate_to_json(cert: &Certificate) -> Result<String> {
    Ok(serde_json::to_string_pretty(cert)?)
}

pub fn read_certificate(path: impl AsRef<Path>) -> Result<Certificate> {
    certificate_from_json(&fs::read_to_string(path)?)
}

pub fn certificate_from_json(text: &str) -> Result<Certificate> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximally_mixed_density() {
        let mut rows = vec![vec![[0.0, 0.0]; 4]; 4];
        for (i, r) in rows.iter_mut().enumerate() {
            r[i] = [0.25, 0.0];
        }
        let text = serde_json::json!({"dims": [2, 2], "density": rows}).to_string();
        let (h, dims) = parse_state_str(&text).unwrap();
        assert_eq!(dims.as_slice(), &[2, 2]);
        assert!((h.trace() - 1.0).abs() < 1e-15);
        assert_eq!(h.entry(1, 1), C64::new(0.25, 0.0));
        assert_eq!(h.entry(1, 2), C64::new(0.0, 0.0));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = r#"{"dims":[2],"ensemble":[
            {"p":0.5,"amplitudes":[[1,0],[0,0]]},
            {"p":0.4,"amplitudes":[[0,0],[1,0]]}]}"#;
        let err = parse_state_str(text).unwrap_err();
        assert!(matches!(err, Error::Ensemble(_)), "{err}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let cases = [
            (r#"{"ensemble":[]}"#, "dims"),
            (r#"{"dims":[2,0],"density":[]}"#, "dims[1]"),
            (r#"{"dims":[2],"ensemble":[{"p":1,"amplitudes":[[1,0],[0]]}]}"#, "ensemble[0].amplitudes[1]"),
            (r#"{"dims":[2],"ensemble":[{"amplitudes":[[1,0],[0,0]]}]}"#, "ensemble[0].p"),
            (r#"{"dims":[2],"density":[[[1,0],[0,0]]]}"#, "density"),
            (r#"{"dims":[2]}"#, "$"),
        ];
        for (text, want) in cases {
            match parse_state_str(text) {
                Err(Error::Schema { path, .. }) => assert_eq!(path, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn non_hermitian_density_is_rejected() {
        let text = r#"{"dims":[2],"density":[[[0.5,0],[0.1,0]],[[0,0],[0.5,0]]]}"#;
        assert!(matches!(parse_state_str(text), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn ensemble_json_roundtrip() {
        let dims = PartyDims::new(vec![2, 3]).unwrap();
        let mut amps = vec![C64::new(0.0, 0.0); 6];
        amps[1] = C64::new(0.6, 0.0);
        amps[4] = C64::new(0.0, -0.8);
        let ens = StateEnsemble::new(dims, vec![EnsembleTerm { weight: 1.0, amplitudes: amps }]).unwrap();
        let h = ensemble_to_tensor(&ens).unwrap();
        let (back, _) = parse_state_str(&ensemble_to_json(&ens)).unwrap();
        assert_eq!(back, h);
        let (back, _) = parse_state_str(&density_to_json(&h)).unwrap();
        assert_eq!(back, h);
    }
}
