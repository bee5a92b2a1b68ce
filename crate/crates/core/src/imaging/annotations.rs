//! Bounding-box annotation files: one `label xmin ymin xmax ymax` per line,
//! coordinates inclusive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub label: String,
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
}

impl BoundingBox {
    pub fn new(label: impl Into<String>, xmin: usize, ymin: usize, xmax: usize, ymax: usize) -> Result<Self> {
        if xmax < xmin || ymax < ymin {
            return Err(Error::Validation(format!(
                "inverted box ({xmin},{ymin})-({xmax},{ymax})"
            )));
        }
        Ok(BoundingBox { label: label.into(), xmin, ymin, xmax, ymax })
    }

    /// Checks the box lies inside a `width`×`height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.xmax >= width || self.ymax >= height {
            return Err(Error::Validation(format!(
                "box ({},{})-({},{}) exceeds {width}x{height} image",
                self.xmin, self.ymin, self.xmax, self.ymax
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.xmin..=self.xmax).contains(&x) && (self.ymin..=self.ymax).contains(&y)
    }

    pub fn area(&self) -> usize {
        (self.xmax - self.xmin + 1) * (self.ymax - self.ymin + 1)
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.xmin <= other.xmax && other.xmin <= self.xmax && self.ymin <= other.ymax && other.ymin <= self.ymax
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<BoundingBox>> {
    let mut boxes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "line {}: expected `label xmin ymin xmax ymax`",
                lineno + 1
            )));
        }
        let mut coords = [0usize; 4];
        for (c, f) in coords.iter_mut().zip(&fields[1..]) {
            *c = f
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad coordinate {f:?}", lineno + 1)))?;
        }
        let [xmin, ymin, xmax, ymax] = coords;
        boxes.push(BoundingBox::new(fields[0], xmin, ymin, xmax, ymax)?);
    }
    Ok(boxes)
}

pub fn format_annotations(boxes: &[BoundingBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{} {} {} {} {}", b.label, b.xmin, b.ymin, b.xmax, b.ymax);
    }
    out
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>> {
    parse_annotations(&fs::read_to_string(path)?)
}

pub fn save_annotations(boxes: &[BoundingBox], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_annotations(boxes))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_box() {
        let boxes = parse_annotations("sheep 10 10 40 60").unwrap();
        assert_eq!(boxes, vec![BoundingBox::new("sheep", 10, 10, 40, 60).unwrap()]);
    }

    #[test]
    fn empty_file() {
        assert!(parse_annotations("").unwrap().is_empty());
        assert!(parse_annotations("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_annotations("boat 5 5 2 9"), Err(Error::Validation(_))));
        assert!(matches!(parse_annotations("boat 5 x 2 9"), Err(Error::Parse(_))));
        assert!(matches!(parse_annotations("boat 5 -1 2 9"), Err(Error::Parse(_))));
        assert!(matches!(parse_annotations("boat 5 5"), Err(Error::Parse(_))));
    }

    #[test]
    fn preserves_order_and_roundtrips() {
        let text = "cat 0 0 3 3\ndog 1 2 5 6\n";
        let boxes = parse_annotations(text).unwrap();
        assert_eq!(boxes[1].label, "dog");
        assert_eq!(format_annotations(&boxes), text);
    }

    #[test]
    fn bounds() {
        let b = BoundingBox::new("x", 0, 0, 9, 9).unwrap();
        assert!(b.validate(10, 10).is_ok());
        assert!(b.validate(9, 10).is_err());
        assert_eq!(b.area(), 100);
    }
}
