//! Canonical JSON output: compact, struct field order, floats with exactly six decimals.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

#[derive(Debug, Clone, Copy, Default)]
pub struct FixedFloatFormatter;

impl Formatter for FixedFloatFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        let text = format!("{value:.6}");
        if text == "-0.000000" {
            writer.write_all(b"0.000000")
        } else {
            writer.write_all(text.as_bytes())
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn write_null<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.write_null(writer)
    }
}

pub fn to_writer<W: io::Write, T: Serialize + ?Sized>(writer: W, value: &T) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, FixedFloatFormatter);
    value.serialize(&mut ser)
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    to_writer(&mut out, value).expect("canonical serialization into memory");
    out
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_fixed() {
        let v = json!({"a": 1.5, "b": [0.1234567, -0.0000001, 2.0], "c": 3});
        assert_eq!(
            to_string(&v),
            r#"{"a":1.500000,"b":[0.123457,0.000000,2.000000],"c":3}"#
        );
    }
}
