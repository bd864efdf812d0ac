//! In-memory session store.
//!
//! A session's working set, profile and clusters are fixed at creation.
//! Slices, the current view and the caption cache change afterwards, each
//! behind its own lock; no lock is held across an await.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;
use vlaudit_core::clustering::{
    attribute_histograms, ClusterView, Histogram, SortKey, TextScore, DEFAULT_HISTOGRAM_BINS,
};
use vlaudit_core::eval::SessionSnapshot;
use vlaudit_core::{Cluster, ClusteringConfig, EmbeddingMatrix, Query, QueryContext, Slice};

/// Source of server timestamps.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub config: ClusteringConfig,
    pub ctx: Arc<QueryContext>,
    pub clusters: Arc<Vec<Cluster>>,
    pub histograms: Vec<Histogram>,
    pub state: RwLock<SessionState>,
    captions: Mutex<HashMap<String, Vec<f32>>>,
}

#[derive(Debug)]
pub struct SessionState {
    /// Creation order; snapshots list slices in this order.
    pub slices: Vec<Slice>,
    pub view: ClusterView,
    pub search: Option<Search>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Search {
    pub text: String,
    pub scores: Vec<TextScore>,
}

impl SessionState {
    pub fn slice(&self, slice_id: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.slice_id == slice_id)
    }

    pub fn slice_mut(&mut self, slice_id: &str) -> Option<&mut Slice> {
        self.slices.iter_mut().find(|s| s.slice_id == slice_id)
    }
}

impl Session {
    /// Clusters a freshly built context. CPU-bound; run off the async runtime.
    pub fn build(
        id: String,
        created_at: DateTime<Utc>,
        config: ClusteringConfig,
        ctx: QueryContext,
        captions: HashMap<String, Vec<f32>>,
    ) -> vlaudit_core::Result<Self> {
        let clusters = vlaudit_core::clustering::agglomerate(&ctx, &config)?;
        let histograms = attribute_histograms(&clusters, DEFAULT_HISTOGRAM_BINS)?;
        let view = ClusterView::build(&clusters, SortKey::default(), Vec::new(), None)?;
        Ok(Self {
            id,
            created_at,
            config,
            ctx: Arc::new(ctx),
            clusters: Arc::new(clusters),
            histograms,
            state: RwLock::new(SessionState {
                slices: Vec::new(),
                view,
                search: None,
            }),
            captions: Mutex::new(captions),
        })
    }

    pub fn query(&self) -> &Query {
        self.ctx.query()
    }

    pub fn cached_caption(&self, text: &str) -> Option<Vec<f32>> {
        self.captions.lock().unwrap().get(text).cloned()
    }

    pub fn cache_caption(&self, text: String, embedding: Vec<f32>) {
        self.captions.lock().unwrap().insert(text, embedding);
    }

    pub fn cached_caption_count(&self) -> usize {
        self.captions.lock().unwrap().len()
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let state = self.state.read().unwrap();
        SessionSnapshot::capture(&self.ctx, &state.slices, self.created_at)
    }
}

/// All live sessions plus the slice-to-session index.
#[derive(Debug)]
pub struct SessionStore {
    pub matrix: Arc<EmbeddingMatrix>,
    pub clock: Clock,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    slice_owner: RwLock<HashMap<String, String>>,
}

impl SessionStore {
    pub fn new(matrix: Arc<EmbeddingMatrix>, clock: Clock) -> Self {
        Self {
            matrix,
            clock,
            sessions: RwLock::new(HashMap::new()),
            slice_owner: RwLock::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: Session) -> Arc<Session> {
        let session = Arc::new(session);
        self.sessions
            .write()
            .unwrap()
            .insert(session.id.clone(), Arc::clone(&session));
        session
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn register_slice(&self, slice_id: &str, session_id: &str) {
        self.slice_owner
            .write()
            .unwrap()
            .insert(slice_id.to_string(), session_id.to_string());
    }

    /// Session owning `slice_id`.
    pub fn owner_of(&self, slice_id: &str) -> Option<Arc<Session>> {
        let session_id = self.slice_owner.read().unwrap().get(slice_id).cloned()?;
        self.get(&session_id)
    }
}
