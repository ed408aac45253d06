//! Small parsing helpers shared by the loaders.

use chrono::NaiveDate;

/// Trimmed value, or `None` when nothing but whitespace is left.
pub(crate) fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

/// Accepts ISO dates (optionally followed by a time part), `DD/MM/YYYY`,
/// `DD/MM/YY` and `YYYYMMDD`.
pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let head = s.split(['T', ' ']).next().unwrap_or(s);
    for fmt in ["%Y-%m-%d", "%d/%m/%Y", "%Y/%m/%d", "%d-%m-%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(head, fmt) {
            return Some(d);
        }
    }
    if head.len() == 8 && head.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(d) = NaiveDate::parse_from_str(head, "%Y%m%d") {
            return Some(d);
        }
    }
    if head.len() == 8 {
        if let Ok(d) = NaiveDate::parse_from_str(head, "%d/%m/%y") {
            return Some(d);
        }
    }
    None
}

/// Parses a decimal written with either `.` or `,` as decimal mark and
/// spaces (regular, non-breaking or narrow non-breaking) as grouping.
///
/// When both marks appear, the last one is the decimal mark and the other
/// is grouping. A single mark followed by exactly three digits is still
/// read as a decimal mark: grouping with `.` or `,` is only recognised when
/// the mark repeats.
pub(crate) fn parse_decimal(s: &str) -> Option<f64> {
    let cleaned: String = s
        .chars()
        .filter(|c| !matches!(c, ' ' | '\u{a0}' | '\u{202f}' | '\t' | '\''))
        .collect();
    if cleaned.is_empty() {
        return None;
    }
    let (sign, body) = match cleaned.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, cleaned.strip_prefix('+').unwrap_or(&cleaned)),
    };
    if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        return None;
    }
    let dots = body.matches('.').count();
    let commas = body.matches(',').count();
    let normalized = match (dots, commas) {
        (0, 0) => body.to_string(),
        (_, 0) if dots > 1 => body.replace('.', ""),
        (0, _) if commas > 1 => body.replace(',', ""),
        (1, 0) => body.to_string(),
        (0, 1) => body.replace(',', "."),
        _ => {
            let last_dot = body.rfind('.').unwrap();
            let last_comma = body.rfind(',').unwrap();
            if last_comma > last_dot {
                if commas > 1 {
                    return None;
                }
                body.replace('.', "").replace(',', ".")
            } else {
                if dots > 1 {
                    return None;
                }
                body.replace(',', "")
            }
        }
    };
    if normalized.starts_with('.') || normalized.ends_with('.') {
        return None;
    }
    normalized.parse::<f64>().ok().map(|v| sign * v)
}

/// Rounds to two decimals, half away from zero.
pub(crate) fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn french_decimal_with_space_grouping() {
        assert_eq!(parse_decimal("12 000,50"), Some(12000.50));
        assert_eq!(parse_decimal("12\u{a0}000,50"), Some(12000.50));
        assert_eq!(parse_decimal("12,000.50"), Some(12000.50));
        assert_eq!(parse_decimal("1.234.567"), Some(1234567.0));
        assert_eq!(parse_decimal("60"), Some(60.0));
        assert_eq!(parse_decimal("abc"), None);
        assert_eq!(parse_decimal(""), None);
        assert_eq!(parse_decimal("1.2,3,4"), None);
    }

    #[test]
    fn dates_in_several_layouts() {
        let d = NaiveDate::from_ymd_opt(2015, 3, 7).unwrap();
        assert_eq!(parse_date("2015-03-07"), Some(d));
        assert_eq!(parse_date("07/03/2015"), Some(d));
        assert_eq!(parse_date("20150307"), Some(d));
        assert_eq!(parse_date("2015-03-07T10:00:00"), Some(d));
        assert_eq!(parse_date("not a date"), None);
    }
}
