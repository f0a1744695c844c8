//! Dense per-site per-type storage.
//!
//! Every engine state is a `|G| x M` array indexed by `(site, type)`. The
//! layout is row-major by site so that all types at one colony are adjacent,
//! which is the access pattern of the local branching rates.

/// A `|G| x M` array of values indexed by `(site, ty)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    data: Vec<T>,
    sites: usize,
    types: usize,
}

impl<T: Copy + Default> Field<T> {
    pub fn zeros(sites: usize, types: usize) -> Self {
        Self {
            data: vec![T::default(); sites * types],
            sites,
            types,
        }
    }
}

impl<T: Copy> Field<T> {
    pub fn constant(sites: usize, types: usize, value: T) -> Self {
        Self {
            data: vec![value; sites * types],
            sites,
            types,
        }
    }

    pub fn from_vec(data: Vec<T>, sites: usize, types: usize) -> Self {
        assert_eq!(data.len(), sites * types, "field shape mismatch");
        Self { data, sites, types }
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn types(&self) -> usize {
        self.types
    }

    #[inline]
    pub fn get(&self, site: usize, ty: usize) -> T {
        self.data[site * self.types + ty]
    }

    #[inline]
    pub fn set(&mut self, site: usize, ty: usize, value: T) {
        self.data[site * self.types + ty] = value;
    }

    /// All types at one site.
    #[inline]
    pub fn site_row(&self, site: usize) -> &[T] {
        &self.data[site * self.types..(site + 1) * self.types]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), T)> + '_ {
        let types = self.types;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((i / types, i % types), v))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            data: self.data.iter().map(|&v| f(v)).collect(),
            sites: self.sites,
            types: self.types,
        }
    }
}

impl Field<f64> {
    /// Total mass at one site, summed over types.
    #[inline]
    pub fn site_total(&self, site: usize) -> f64 {
        self.site_row(site).iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl Field<u64> {
    #[inline]
    pub fn site_total(&self, site: usize) -> u64 {
        self.site_row(site).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }
}

impl Field<u32> {
    #[inline]
    pub fn site_total(&self, site: usize) -> u32 {
        self.site_row(site).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| u64::from(v)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let mut f = Field::<f64>::zeros(3, 2);
        f.set(2, 1, 5.0);
        f.set(0, 0, 1.0);
        assert_eq!(f.get(2, 1), 5.0);
        assert_eq!(f.get(0, 0), 1.0);
        assert_eq!(f.site_row(2), &[0.0, 5.0]);
        assert_eq!(f.total(), 6.0);
    }

    #[test]
    fn site_totals() {
        let f = Field::from_vec(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(f.site_total(0), 3.0);
        assert_eq!(f.site_total(1), 7.0);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn bad_shape_panics() {
        let _ = Field::from_vec(vec![1.0; 5], 2, 2);
    }
}
