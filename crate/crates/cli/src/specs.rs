//! `key=value` flag specs for gain design.

use shuttle_core::param_space::{DRegion, Interval, UncertaintyBox};

fn pairs(spec: &str) -> Result<Vec<(&str, &str)>, String> {
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| format!("`{p}` is not key=value"))
        })
        .collect()
}

fn number(key: &str, text: &str) -> Result<f64, String> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("{key}: `{text}` is not a finite number"))
}

/// `lo:hi` or a single value.
fn interval(key: &str, text: &str) -> Result<Interval, String> {
    match text.split_once(':') {
        Some((lo, hi)) => Ok(Interval::new(number(key, lo)?, number(key, hi)?)),
        None => Ok(Interval::point(number(key, text)?)),
    }
}

/// Applies `m=lo:hi,vx=lo:hi,eta=lo:hi` on top of `base`.
pub fn parse_box(spec: &str, base: UncertaintyBox) -> Result<UncertaintyBox, String> {
    let mut out = base;
    for (k, v) in pairs(spec)? {
        let iv = interval(k, v)?;
        match k {
            "m" => out.m = iv,
            "vx" => out.vx = iv,
            "eta" => out.eta = iv,
            other => return Err(format!("unknown box key `{other}` (expected m, vx, eta)")),
        }
    }
    out.validate().map_err(|e| e.to_string())?;
    Ok(out)
}

/// Applies `sigma=…,theta=…(deg),omega=…` on top of the default region.
pub fn parse_dregion(spec: &str) -> Result<DRegion, String> {
    let mut out = DRegion::default();
    for (k, v) in pairs(spec)? {
        let x = number(k, v)?;
        match k {
            "sigma" => out.sigma_min = x,
            "theta" => out.theta = x.to_radians(),
            "omega" => out.omega_max = x,
            other => return Err(format!("unknown D-region key `{other}` (expected sigma, theta, omega)")),
        }
    }
    out.validate().map_err(|e| e.to_string())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_overrides_only_given_keys() {
        let b = parse_box("m=1000:1200, eta=0.8", UncertaintyBox::fusion()).unwrap();
        assert_eq!(b.m, Interval::new(1000.0, 1200.0));
        assert_eq!(b.eta, Interval::point(0.8));
        assert_eq!(b.vx, UncertaintyBox::fusion().vx);
        assert_eq!(parse_box("", UncertaintyBox::dash()).unwrap(), UncertaintyBox::dash());
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(parse_box("m=2:1", UncertaintyBox::fusion()).is_err());
        assert!(parse_box("mass=1", UncertaintyBox::fusion()).is_err());
        assert!(parse_box("m", UncertaintyBox::fusion()).is_err());
        assert!(parse_dregion("theta=95").is_err());
        assert!(parse_dregion("sigma=abc").is_err());
    }

    #[test]
    fn dregion_theta_in_degrees() {
        let r = parse_dregion("sigma=0.5,theta=45,omega=30").unwrap();
        assert_eq!(r.sigma_min, 0.5);
        assert!((r.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(r.omega_max, 30.0);
    }
}
