use super::mobility::Point;

/// Disc model link rule: both ends must reach each other.
pub fn link_up(a: Point, range_a: f64, b: Point, range_b: f64) -> bool {
    a.distance(&b) <= range_a.min(range_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_range_rule() {
        let o = Point::new(0.0, 0.0);
        assert!(link_up(o, 50.0, Point::new(30.0, 0.0), 40.0));
        assert!(!link_up(o, 50.0, Point::new(45.0, 0.0), 40.0));
        assert!(link_up(o, 10.0, o, 10.0));
    }
}
