use crate::error::{Error, Result};
use crate::model::{Site, SpinSystemConfig};
use crate::scalar::Real;

/// One-dimensional ordering of chain sites and ancillas used by the MPS.
///
/// The sender follows its chain site and the receiver precedes its own, so
/// for `N = 100, m_S = 45, m_R = 55` the ancillas sit at 1-based positions 46
/// and 56. A sender on site 1 is put at the head and a receiver on site N at
/// the tail, where they cross no chain bond; a receiver whose site directly
/// follows the sender's is put after that site, so no chain bond crosses two
/// ancillas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedLayout {
    pub n_sites: usize,
    order: Vec<Site>,
}

impl ExtendedLayout {
    /// Plain chain without ancillas.
    pub fn chain(n_sites: usize) -> Self {
        Self {
            n_sites,
            order: (1..=n_sites).map(Site::Chain).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[Site] {
        &self.order
    }

    /// 0-based position of `site`, if present.
    pub fn position(&self, site: Site) -> Option<usize> {
        self.order.iter().position(|&s| s == site)
    }

    /// Positions where the ancillas were inserted into the chain.
    pub fn ancilla_positions(&self) -> Option<(usize, usize)> {
        Some((self.position(Site::Sender)?, self.position(Site::Receiver)?))
    }

    /// Chain bonds whose two sites are not adjacent in the layout.
    pub fn crossing_bonds(&self) -> Vec<(usize, usize)> {
        (1..self.n_sites)
            .filter_map(|i| {
                let a = self.position(Site::Chain(i))?;
                let b = self.position(Site::Chain(i + 1))?;
                (b != a + 1).then_some((a, b))
            })
            .collect()
    }
}

pub fn embed_ancillas<T: Real>(config: &SpinSystemConfig<T>) -> Result<ExtendedLayout> {
    let (n, ms, mr) = (config.n_sites, config.m_sender, config.m_receiver);
    if ms == mr {
        return Err(Error::InvalidConfig("sender and receiver attach to the same site".into()));
    }
    if ms > mr || ms == 0 || mr > n {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= m_sender < m_receiver <= n_sites, got {ms}, {mr}, {n}"
        )));
    }
    let mut order = Vec::with_capacity(n + 2);
    if ms == 1 {
        order.push(Site::Sender);
    }
    for i in 1..=n {
        let receiver_before = i == mr && mr != n && mr != ms + 1;
        if receiver_before {
            order.push(Site::Receiver);
        }
        order.push(Site::Chain(i));
        if i == ms && ms != 1 {
            order.push(Site::Sender);
        }
        if i == mr && !receiver_before {
            order.push(Site::Receiver);
        }
    }
    Ok(ExtendedLayout { n_sites: n, order })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, ms: usize, mr: usize) -> SpinSystemConfig<f64> {
        SpinSystemConfig {
            m_sender: ms,
            m_receiver: mr,
            allow_off_centre: true,
            ..SpinSystemConfig::centred(n)
        }
    }

    #[test]
    fn reference_positions() {
        let l = embed_ancillas(&cfg(20, 9, 11)).unwrap();
        assert_eq!(l.len(), 22);
        assert_eq!(l.ancilla_positions(), Some((9, 11)));
        assert_eq!(l.crossing_bonds().len(), 2);
        let l = embed_ancillas(&cfg(100, 45, 55)).unwrap();
        assert_eq!(l.len(), 102);
        assert_eq!(l.ancilla_positions(), Some((45, 55)));
    }

    #[test]
    fn head_sender_needs_no_swap() {
        let l = embed_ancillas(&cfg(10, 1, 6)).unwrap();
        assert_eq!(l.order()[0], Site::Sender);
        assert_eq!(l.crossing_bonds().len(), 1);
        let l = embed_ancillas(&cfg(10, 1, 10)).unwrap();
        assert!(l.crossing_bonds().is_empty());
        assert_eq!(l.order()[11], Site::Receiver);
    }

    #[test]
    fn adjacent_attachment_sites() {
        let l = embed_ancillas(&cfg(10, 4, 5)).unwrap();
        assert_eq!(
            &l.order()[3..7],
            &[Site::Chain(4), Site::Sender, Site::Chain(5), Site::Receiver]
        );
        for (a, b) in l.crossing_bonds() {
            assert_eq!(b, a + 2);
        }
    }

    #[test]
    fn every_site_appears_once() {
        for (ms, mr) in [(1, 2), (2, 9), (3, 10), (5, 6), (1, 10), (9, 10)] {
            let l = embed_ancillas(&cfg(10, ms, mr)).unwrap();
            assert_eq!(l.len(), 12);
            for i in 1..=10 {
                assert!(l.position(Site::Chain(i)).is_some());
            }
            assert!(l.crossing_bonds().iter().all(|(a, b)| b - a == 2));
            let (s, r) = l.ancilla_positions().unwrap();
            assert!(s < r);
            let ps = l.position(Site::Chain(ms)).unwrap();
            let pr = l.position(Site::Chain(mr)).unwrap();
            assert_eq!(s.abs_diff(ps), 1);
            assert_eq!(r.abs_diff(pr), 1);
        }
    }

    #[test]
    fn same_site_is_rejected() {
        assert!(embed_ancillas(&cfg(10, 4, 4)).is_err());
    }
}
