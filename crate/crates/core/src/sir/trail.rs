//! Persistent assignment history shared between particles.

use std::sync::Arc;

use super::ClusterKey;

#[derive(Debug)]
pub struct TrailNode {
    pub key: ClusterKey,
    pub prev: Trail,
}

/// Most recent assignment first; `None` for an empty history.
pub type Trail = Option<Arc<TrailNode>>;

impl Drop for TrailNode {
    // unlink iteratively so long histories do not recurse on drop
    fn drop(&mut self) {
        let mut next = self.prev.take();
        while let Some(node) = next {
            match Arc::try_unwrap(node) {
                Ok(mut inner) => next = inner.prev.take(),
                Err(_) => break,
            }
        }
    }
}

pub fn push(trail: &Trail, key: ClusterKey) -> Trail {
    Some(Arc::new(TrailNode {
        key,
        prev: trail.clone(),
    }))
}

/// Assignments oldest first.
pub fn to_vec(trail: &Trail) -> Vec<ClusterKey> {
    let mut out = Vec::new();
    let mut cur = trail.as_deref();
    while let Some(node) = cur {
        out.push(node.key);
        cur = node.prev.as_deref();
    }
    out.reverse();
    out
}
