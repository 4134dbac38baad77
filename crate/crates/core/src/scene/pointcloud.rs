use nalgebra::Vector3;

#[derive(Clone, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    pub color: [f64; 3],
    /// Depth of the pixel this point was lifted from, in its source view.
    pub source_depth: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<ColoredPoint>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: ColoredPointCloud) {
        self.points.extend(other.points);
    }
}

impl FromIterator<ColoredPoint> for ColoredPointCloud {
    fn from_iter<I: IntoIterator<Item = ColoredPoint>>(iter: I) -> Self {
        ColoredPointCloud {
            points: iter.into_iter().collect(),
        }
    }
}
