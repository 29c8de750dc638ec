use serde::{Deserialize, Serialize};

pub const HUMAN: u8 = 0;
pub const PATCH: u8 = 1;

/// Labelled box, center/size normalized to the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u8,
    pub cx: f64,
    pub cy: f64,
    pub bw: f64,
    pub bh: f64,
}

/// Axis-aligned box by corners. Units are whatever the caller uses
/// (normalized or pixels); IoU is unit-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Integer pixel rectangle: columns `x..x+w`, rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect {
            x1: x,
            y1: y,
            x2: x + w,
            y2: y + h,
        }
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

impl PixelRect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

impl BBox {
    pub fn new(class_id: u8, cx: f64, cy: f64, bw: f64, bh: f64) -> Self {
        BBox {
            class_id,
            cx,
            cy,
            bw,
            bh,
        }
    }

    /// Box covering the given pixel rectangle of a `width x height` image.
    pub fn from_pixel_rect(class_id: u8, r: PixelRect, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        BBox {
            class_id,
            cx: (r.x as f64 + r.w as f64 / 2.0) / w,
            cy: (r.y as f64 + r.h as f64 / 2.0) / h,
            bw: r.w as f64 / w,
            bh: r.h as f64 / h,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect {
            x1: self.cx - self.bw / 2.0,
            y1: self.cy - self.bh / 2.0,
            x2: self.cx + self.bw / 2.0,
            y2: self.cy + self.bh / 2.0,
        }
    }

    pub fn from_rect(class_id: u8, r: Rect) -> Self {
        BBox {
            class_id,
            cx: (r.x1 + r.x2) / 2.0,
            cy: (r.y1 + r.y2) / 2.0,
            bw: r.width(),
            bh: r.height(),
        }
    }

    pub fn pixel_rect_f(&self, width: usize, height: usize) -> Rect {
        let r = self.rect();
        let (w, h) = (width as f64, height as f64);
        Rect {
            x1: r.x1 * w,
            y1: r.y1 * h,
            x2: r.x2 * w,
            y2: r.y2 * h,
        }
    }

    /// Pixel rectangle with corners rounded to the nearest pixel boundary.
    pub fn pixel_rect(&self, width: usize, height: usize) -> PixelRect {
        let r = self.pixel_rect_f(width, height);
        let x1 = r.x1.round().clamp(0.0, width as f64) as usize;
        let y1 = r.y1.round().clamp(0.0, height as f64) as usize;
        let x2 = r.x2.round().clamp(0.0, width as f64) as usize;
        let y2 = r.y2.round().clamp(0.0, height as f64) as usize;
        PixelRect {
            x: x1,
            y: y1,
            w: x2.saturating_sub(x1),
            h: y2.saturating_sub(y1),
        }
    }

    /// Larger side of the box in pixels.
    pub fn max_side_px(&self, width: usize, height: usize) -> f64 {
        (self.bw * width as f64).max(self.bh * height as f64)
    }

    /// Clips the box to the unit square.
    pub fn clamped(&self) -> BBox {
        let r = self.rect();
        if r.x1 >= 0.0 && r.y1 >= 0.0 && r.x2 <= 1.0 && r.y2 <= 1.0 {
            return *self;
        }
        let c = Rect {
            x1: r.x1.clamp(0.0, 1.0),
            y1: r.y1.clamp(0.0, 1.0),
            x2: r.x2.clamp(0.0, 1.0),
            y2: r.y2.clamp(0.0, 1.0),
        };
        BBox::from_rect(self.class_id, c)
    }

    pub fn is_valid(&self) -> bool {
        let r = self.rect();
        [self.cx, self.cy, self.bw, self.bh]
            .iter()
            .all(|v| v.is_finite())
            && self.bw > 0.0
            && self.bh > 0.0
            && self.bw <= 1.0
            && self.bh <= 1.0
            && r.x1 >= -1e-9
            && r.y1 >= -1e-9
            && r.x2 <= 1.0 + 1e-9
            && r.y2 <= 1.0 + 1e-9
    }
}
