//! Bit-exact text encoding of `f64` as C99 hexadecimal literals.

use crate::error::{Error, Result};

/// `0x1.8p1` style encoding; zero is `0x0p0`, subnormals use `0x0.`.
pub fn format(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut frac = format!("{mant:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    if frac.is_empty() {
        format!("{sign}0x{lead}p{e}")
    } else {
        format!("{sign}0x{lead}.{frac}p{e}")
    }
}

/// Inverse of [`format`]. Plain decimal literals are accepted as well.
pub fn parse(s: &str) -> Result<f64> {
    let bad = || Error::Format(format!("invalid float literal `{s}`"));
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) else {
        return t.parse::<f64>().map_err(|_| bad());
    };
    let (digits, exp) = hex.split_once(['p', 'P']).ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if frac.len() > 13 || int.is_empty() {
        return Err(bad());
    }
    let lead = u64::from_str_radix(int, 16).map_err(|_| bad())?;
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        0 if frac_bits == 0 => 0,
        0 if exp == -1022 => frac_bits,
        1 if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac_bits,
        _ => return Err(bad()),
    };
    let v = f64::from_bits(bits);
    Ok(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format(1.0), "0x1p0");
        assert_eq!(format(3.0), "0x1.8p1");
        assert_eq!(format(-0.1), "-0x1.999999999999ap-4");
        assert_eq!(format(0.0), "0x0p0");
        assert_eq!(parse("0x1.8p1").unwrap(), 3.0);
        assert_eq!(parse("2.5").unwrap(), 2.5);
        assert!(parse("0x2p0").is_err());
        assert!(parse("0x1.g").is_err());
    }

    #[test]
    fn extremes_round_trip() {
        for v in [f64::MIN_POSITIVE, f64::MAX, -f64::MAX, 5e-324, f64::EPSILON, -0.0] {
            assert_eq!(parse(&format(v)).unwrap().to_bits(), v.to_bits());
        }
    }

    proptest! {
        #[test]
        fn any_finite_bits_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            prop_assert_eq!(parse(&format(v)).unwrap().to_bits(), bits);
        }
    }
}
