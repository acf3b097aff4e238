//! Arc-length parametrised reference paths built from line and arc pieces.

use std::f64::consts::FRAC_PI_2;

use crate::scene::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Line {
        start: Point2,
        heading: f64,
        length: f64,
    },
    /// Circular arc starting at `start` with initial `heading`; positive
    /// `sweep` turns left.
    Arc {
        start: Point2,
        heading: f64,
        radius: f64,
        sweep: f64,
    },
}

impl Piece {
    pub fn length(&self) -> f64 {
        match *self {
            Piece::Line { length, .. } => length,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and tangent heading at arc length `s` from the piece start.
    pub fn pose_at(&self, s: f64) -> (Point2, f64) {
        match *self {
            Piece::Line { start, heading, .. } => (
                Point2::new(start.x + s * heading.cos(), start.y + s * heading.sin()),
                heading,
            ),
            Piece::Arc {
                start,
                heading,
                radius,
                sweep,
            } => {
                let side = sweep.signum();
                let normal = heading + side * FRAC_PI_2;
                let center = Point2::new(start.x + radius * normal.cos(), start.y + radius * normal.sin());
                let turned = side * s / radius;
                let h = heading + turned;
                let back = h - side * FRAC_PI_2;
                (
                    Point2::new(center.x + radius * back.cos(), center.y + radius * back.sin()),
                    h,
                )
            }
        }
    }

    pub fn end(&self) -> (Point2, f64) {
        self.pose_at(self.length())
    }
}

/// A chain of pieces. Positions before the start and past the end are
/// extrapolated along the boundary headings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Path {
    pub pieces: Vec<Piece>,
}

impl Path {
    pub fn new(start: Point2, heading: f64) -> PathBuilder {
        PathBuilder {
            pos: start,
            heading,
            pieces: Vec::new(),
        }
    }

    pub fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::length).sum()
    }

    /// Arc length at which each piece starts.
    pub fn piece_starts(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pieces
            .iter()
            .map(|p| {
                let s = acc;
                acc += p.length();
                s
            })
            .collect()
    }

    pub fn pose_at(&self, s: f64) -> (Point2, f64) {
        let first = self.pieces.first().expect("path has pieces");
        if s < 0.0 {
            let (p, h) = first.pose_at(0.0);
            return (Point2::new(p.x + s * h.cos(), p.y + s * h.sin()), h);
        }
        let mut rest = s;
        for piece in &self.pieces {
            let len = piece.length();
            if rest <= len {
                return piece.pose_at(rest);
            }
            rest -= len;
        }
        let (p, h) = self.pieces.last().expect("path has pieces").end();
        (Point2::new(p.x + rest * h.cos(), p.y + rest * h.sin()), h)
    }

    /// Pose at `s` shifted laterally by `offset` (positive to the left).
    pub fn offset_pose(&self, s: f64, offset: f64) -> (Point2, f64) {
        let (p, h) = self.pose_at(s);
        (
            Point2::new(p.x - offset * h.sin(), p.y + offset * h.cos()),
            h,
        )
    }

    /// Reference arc length reached after travelling `d` meters along the
    /// lane at lateral `offset`, starting from reference arc length `s`.
    pub fn advance(&self, mut s: f64, mut d: f64, offset: f64) -> f64 {
        if s < 0.0 {
            let step = d.min(-s);
            s += step;
            d -= step;
        }
        let mut start = 0.0;
        for piece in &self.pieces {
            let len = piece.length();
            let end = start + len;
            if d <= 0.0 {
                return s;
            }
            if s < end {
                let rate = match *piece {
                    Piece::Line { .. } => 1.0,
                    Piece::Arc { radius, sweep, .. } => (1.0 - sweep.signum() * offset / radius).max(1e-3),
                };
                let room = (end - s) * rate;
                if d <= room {
                    return s + d / rate;
                }
                d -= room;
                s = end;
            }
            start = end;
        }
        s + d
    }

    /// Concatenates paths end to end without checking continuity.
    pub fn join(parts: &[&Path]) -> Path {
        Path {
            pieces: parts.iter().flat_map(|p| p.pieces.iter().copied()).collect(),
        }
    }

    pub fn rotated(&self, angle: f64) -> Path {
        let (s, c) = angle.sin_cos();
        let rot = |p: Point2| Point2::new(c * p.x - s * p.y, s * p.x + c * p.y);
        Path {
            pieces: self
                .pieces
                .iter()
                .map(|piece| match *piece {
                    Piece::Line { start, heading, length } => Piece::Line {
                        start: rot(start),
                        heading: heading + angle,
                        length,
                    },
                    Piece::Arc {
                        start,
                        heading,
                        radius,
                        sweep,
                    } => Piece::Arc {
                        start: rot(start),
                        heading: heading + angle,
                        radius,
                        sweep,
                    },
                })
                .collect(),
        }
    }
}

pub struct PathBuilder {
    pos: Point2,
    heading: f64,
    pieces: Vec<Piece>,
}

impl PathBuilder {
    pub fn line(mut self, length: f64) -> Self {
        let piece = Piece::Line {
            start: self.pos,
            heading: self.heading,
            length,
        };
        (self.pos, self.heading) = piece.end();
        self.pieces.push(piece);
        self
    }

    pub fn arc(mut self, radius: f64, sweep: f64) -> Self {
        let piece = Piece::Arc {
            start: self.pos,
            heading: self.heading,
            radius,
            sweep,
        };
        (self.pos, self.heading) = piece.end();
        self.pieces.push(piece);
        self
    }

    pub fn build(self) -> Path {
        Path { pieces: self.pieces }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}
