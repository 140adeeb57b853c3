//! Sweep table output.

use std::fmt::Write as _;

use regenscatter_core::link::SweepRow;

pub const HEADER: &str =
    "link,distance_m,bit_rate_bps,offset_hz,p_rx_dbm,eb_n0_db,n_bits,n_errors,ber,sync_failed";

/// C `printf("%.6e")`: six fractional digits, signed exponent of at least two digits.
pub fn sci6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.6e}");
    let (mantissa, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn render(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.link.label(),
            sci6(r.distance_m),
            sci6(r.bit_rate_bps),
            sci6(r.offset_hz),
            sci6(m.p_rx_dbm),
            sci6(m.eb_n0_db),
            m.n_bits,
            m.n_errors,
            sci6(m.ber),
            u8::from(m.sync_failed),
        );
    }
    out
}
