//! Browser bindings: certify a pasted state, scan a one-parameter family,
//! and re-check a certificate.

use serde_json::json;
use wasm_bindgen::prelude::*;

use qsep::catalog::{bell_pair_mixture, ghz_w_mixture, isotropic, seven_term_symmetric};
use qsep::certify::{run_etkm_sdr, CertifyOptions, Verdict};
use qsep::io::{certificate_from_json, certificate_to_json, check_certificate, density_to_json, ensemble_to_json, parse_state_str};
use qsep::poly::Mode;
use qsep::tensor::{density_to_tensor, HermitianTensor, PartyDims, C64};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn mode(symmetric: bool) -> Mode {
    if symmetric {
        Mode::Symmetric
    } else {
        Mode::Partitioned
    }
}

/// State file text for one of the built-in examples.
#[wasm_bindgen]
pub fn preset(name: &str) -> Result<String, JsError> {
    Ok(match name {
        "bell-pair" => ensemble_to_json(&bell_pair_mixture()),
        "ghz-w" => ensemble_to_json(&ghz_w_mixture()),
        "seven-term" => ensemble_to_json(&seven_term_symmetric()),
        "isotropic" => density_to_json(&isotropic(2, 0.5).map_err(js_err)?),
        other => return Err(JsError::new(&format!("unknown preset `{other}`"))),
    })
}

/// Runs the certifier on a state file and returns the certificate JSON.
#[wasm_bindgen]
pub fn certify(state: &str, symmetric: bool, seed: u64, k_max: Option<usize>) -> Result<String, JsError> {
    let (h, _) = parse_state_str(state).map_err(js_err)?;
    let mut options = CertifyOptions::new(mode(symmetric));
    options.seed = seed;
    options.k_max = k_max;
    options.rescale_trace = true;
    let cert = run_etkm_sdr(&h, &options).map_err(js_err)?;
    certificate_to_json(&cert).map_err(js_err)
}

/// Re-checks a certificate against a state. Returns `{ok, value | reason}`.
#[wasm_bindgen]
pub fn verify(certificate: &str, state: &str) -> Result<String, JsError> {
    let cert = certificate_from_json(certificate).map_err(js_err)?;
    let (h, _) = parse_state_str(state).map_err(js_err)?;
    let out = match check_certificate(&cert, &h) {
        Ok(value) => json!({ "ok": true, "verdict": cert.verdict.name(), "value": value }),
        Err(e) => json!({ "ok": false, "verdict": cert.verdict.name(), "reason": e.to_string() }),
    };
    Ok(out.to_string())
}

/// `p |Phi+><Phi+| + (1-p) P_sym / 3`, where `P_sym` projects onto the
/// two-qubit symmetric subspace.
pub fn symmetric_family(p: f64) -> HermitianTensor {
    let dims = PartyDims::uniform(2, 2).unwrap();
    let q = (1.0 - p) / 3.0;
    let mut rows = vec![vec![C64::new(0.0, 0.0); 4]; 4];
    // Phi+ and Phi- together fill the |00>, |11> corner, Psi+ the middle
    let (diag, corner) = (p / 2.0 + q, p / 2.0);
    rows[0][0] = C64::new(diag, 0.0);
    rows[3][3] = C64::new(diag, 0.0);
    rows[0][3] = C64::new(corner, 0.0);
    rows[3][0] = C64::new(corner, 0.0);
    for (a, b) in [(1, 1), (2, 2), (1, 2), (2, 1)] {
        rows[a][b] = C64::new(q / 2.0, 0.0);
    }
    density_to_tensor(&rows, &dims).unwrap()
}

/// Certifies one member of [`symmetric_family`] in symmetric mode and
/// returns `{p, verdict, r, k, levels}`.
#[wasm_bindgen]
pub fn scan_point(p: f64, seed: u64) -> Result<String, JsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(JsError::new("p must lie in [0, 1]"));
    }
    let h = symmetric_family(p);
    let mut options = CertifyOptions::new(Mode::Symmetric);
    options.seed = seed;
    let cert = run_etkm_sdr(&h, &options).map_err(js_err)?;
    let k = match &cert.verdict {
        Verdict::Separable { level_k, .. } | Verdict::NotSeparable { level_k, .. } => *level_k,
        Verdict::Undetermined { k_max_reached, .. } => *k_max_reached,
    };
    Ok(json!({
        "p": p,
        "verdict": cert.verdict.name(),
        "r": cert.rank(),
        "k": k,
        "levels": cert.metadata.levels.len(),
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qsep::tensor::check_structure;

    #[test]
    fn family_is_a_symmetric_state() {
        for p in [0.0, 0.25, 1.0] {
            let h = symmetric_family(p);
            assert!((h.trace() - 1.0).abs() < 1e-15);
            assert!(check_structure(&h, 1e-14).symmetric);
        }
        // p = 1 is the Bell state
        let h = symmetric_family(1.0);
        assert!((h.entry(0, 3).re - 0.5).abs() < 1e-15);
        assert_eq!(h.entry(1, 1).re, 0.0);
    }

    #[test]
    fn presets_parse() {
        for name in ["bell-pair", "ghz-w", "seven-term", "isotropic"] {
            let (h, _) = parse_state_str(&preset(name).unwrap()).unwrap();
            assert!((h.trace() - 1.0).abs() < 1e-12, "{name}");
        }
    }
}
