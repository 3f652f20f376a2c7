//! Artifact serialization. JSON is emitted by hand so that field order is
//! fixed and every float carries 17 significant digits: identical runs then
//! produce byte-identical files (the timestamp aside), which is what the
//! reproducibility contract asks for.

/// 17 significant digits; round-trips any double exactly. Non-finite values
/// have no JSON representation and become null.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    match v {
        Some(v) => num(v),
        None => "null".to_string(),
    }
}

pub fn string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn array(items: impl IntoIterator<Item = String>) -> String {
    let body: Vec<String> = items.into_iter().collect();
    format!("[{}]", body.join(", "))
}

pub fn vector(v: &[f64]) -> String {
    array(v.iter().map(|x| num(*x)))
}

/// An object whose keys appear exactly in insertion order.
pub struct Obj {
    fields: Vec<(String, String)>,
}

impl Obj {
    pub fn new() -> Obj {
        Obj { fields: Vec::new() }
    }

    pub fn field(mut self, key: &str, value: String) -> Obj {
        self.fields.push((key.to_string(), value));
        self
    }

    pub fn render(&self, indent: usize) -> String {
        if self.fields.is_empty() {
            return "{}".to_string();
        }
        let pad = "  ".repeat(indent + 1);
        let close = "  ".repeat(indent);
        let body: Vec<String> = self
            .fields
            .iter()
            .map(|(k, v)| format!("{pad}{}: {v}", string(k)))
            .collect();
        format!("{{\n{}\n{close}}}", body.join(",\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_the_emitted_text() {
        for v in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -7.25e17] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn non_finite_becomes_null() {
        assert_eq!(num(f64::NAN), "null");
        assert_eq!(num(f64::INFINITY), "null");
    }

    #[test]
    fn strings_escape_quotes_and_control_bytes() {
        assert_eq!(string("a\"b\\c\nd"), "\"a\\\"b\\\\c\\nd\"");
    }

    #[test]
    fn objects_keep_insertion_order() {
        let o = Obj::new()
            .field("b", "1".into())
            .field("a", "2".into());
        assert_eq!(o.render(0), "{\n  \"b\": 1,\n  \"a\": 2\n}");
    }
}
