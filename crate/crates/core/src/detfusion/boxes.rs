use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(Error::data(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, o: &BBox) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }

    pub fn contains(&self, o: &BBox) -> bool {
        self.x1 <= o.x1 && self.y1 <= o.y1 && self.x2 >= o.x2 && self.y2 >= o.y2
    }

    /// Intersection with `[0, w] × [0, h]`, or `None` if nothing remains.
    pub fn clip(&self, w: f64, h: f64) -> Option<BBox> {
        let b = BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        };
        (b.x1 < b.x2 && b.y1 < b.y2).then_some(b)
    }
}

/// Intersection over union; `0` for disjoint interiors.
pub fn box_iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection(b);
    if a == b {
        return Ok(1.0);
    }
    Ok(inter / (a.area() + b.area() - inter))
}

/// Smallest box containing both inputs.
pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        assert_eq!(box_iou(&b(1.0, 2.0, 5.0, 7.0), &b(1.0, 2.0, 5.0, 7.0)).unwrap(), 1.0);
        assert_eq!(box_iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)).unwrap(), 0.0);
        let v = box_iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 0.0, 3.0, 2.0)).unwrap();
        assert!((v - 2.0 / 6.0).abs() < 1e-15);
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn hull_cases() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(union_box(&a, &a), a);
        assert_eq!(union_box(&a, &b(0.2, 0.2, 0.5, 0.5)), a);
        assert_eq!(union_box(&a, &b(2.0, 2.0, 3.0, 3.0)), b(0.0, 0.0, 3.0, 3.0));
    }

    #[test]
    fn clipping() {
        assert_eq!(b(-2.0, 1.0, 5.0, 20.0).clip(4.0, 10.0), Some(b(0.0, 1.0, 4.0, 10.0)));
        assert_eq!(b(5.0, 1.0, 6.0, 2.0).clip(4.0, 10.0), None);
    }
}
