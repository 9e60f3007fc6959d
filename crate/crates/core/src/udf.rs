//! Registry of user-defined functions referenced by operations.
//!
//! The registry is filled before a run starts and is read-only while batches
//! execute, so it is shared behind an `Arc` without locking.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::CoreError;
use crate::types::{FunctionKind, FunctionRef, Key, Value};

pub type ValueFn = Arc<dyn Fn(&[Value], &[Value]) -> Value + Send + Sync>;
pub type ConditionFn = Arc<dyn Fn(&[Value], &[Value]) -> bool + Send + Sync>;
pub type WindowFn = Arc<dyn Fn(&[Value], &[Value]) -> Value + Send + Sync>;
pub type SelectorFn = Arc<dyn Fn(&[Value], u64) -> Vec<Key> + Send + Sync>;

/// Function body. Each variant fixes the function's [`FunctionKind`].
#[derive(Clone)]
pub enum UdfBody {
    Value(ValueFn),
    Condition(ConditionFn),
    WindowAggregate(WindowFn),
    KeySelector(SelectorFn),
}

impl UdfBody {
    pub fn kind(&self) -> FunctionKind {
        match self {
            UdfBody::Value(_) => FunctionKind::Value,
            UdfBody::Condition(_) => FunctionKind::Condition,
            UdfBody::WindowAggregate(_) => FunctionKind::WindowAggregate,
            UdfBody::KeySelector(_) => FunctionKind::KeySelector,
        }
    }

    pub fn value(f: impl Fn(&[Value], &[Value]) -> Value + Send + Sync + 'static) -> Self {
        UdfBody::Value(Arc::new(f))
    }

    pub fn condition(f: impl Fn(&[Value], &[Value]) -> bool + Send + Sync + 'static) -> Self {
        UdfBody::Condition(Arc::new(f))
    }

    pub fn window(f: impl Fn(&[Value], &[Value]) -> Value + Send + Sync + 'static) -> Self {
        UdfBody::WindowAggregate(Arc::new(f))
    }

    pub fn selector(f: impl Fn(&[Value], u64) -> Vec<Key> + Send + Sync + 'static) -> Self {
        UdfBody::KeySelector(Arc::new(f))
    }
}

impl fmt::Debug for UdfBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UdfBody::{:?}", self.kind())
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    arity: u32,
    cost: Duration,
    body: UdfBody,
}

#[derive(Debug, Clone, Default)]
pub struct UdfRegistry {
    entries: Vec<Entry>,
    by_name: HashMap<String, u32>,
}

impl UdfRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `body` under `name`. `cost_us` is the busy-wait charged on every
    /// evaluation of value and window functions.
    pub fn register(
        &mut self,
        name: &str,
        arity: u32,
        cost_us: u64,
        body: UdfBody,
    ) -> Result<FunctionRef, CoreError> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::DuplicateFunction(name.to_string()));
        }
        let id = self.entries.len() as u32;
        let kind = body.kind();
        self.entries.push(Entry {
            name: name.to_string(),
            arity,
            cost: Duration::from_micros(cost_us),
            body,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(FunctionRef { id, arity, kind })
    }

    pub fn resolve(&self, id: u32) -> Result<FunctionRef, CoreError> {
        let e = self.entry(id)?;
        Ok(FunctionRef {
            id,
            arity: e.arity,
            kind: e.body.kind(),
        })
    }

    pub fn lookup(&self, name: &str) -> Option<FunctionRef> {
        self.by_name.get(name).and_then(|&id| self.resolve(id).ok())
    }

    pub fn name(&self, f: FunctionRef) -> Result<&str, CoreError> {
        Ok(&self.entry(f.id)?.name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Configured evaluation cost in microseconds.
    pub fn cost_us(&self, f: FunctionRef) -> f64 {
        self.entries
            .get(f.id as usize)
            .map(|e| e.cost.as_secs_f64() * 1e6)
            .unwrap_or(0.0)
    }

    fn entry(&self, id: u32) -> Result<&Entry, CoreError> {
        self.entries.get(id as usize).ok_or(CoreError::UnknownFunction(id))
    }

    fn body(&self, f: FunctionRef, expected: FunctionKind) -> Result<&Entry, CoreError> {
        let e = self.entry(f.id)?;
        let actual = e.body.kind();
        if actual != expected {
            return Err(CoreError::WrongFunctionKind {
                id: f.id,
                expected,
                actual,
            });
        }
        Ok(e)
    }

    pub fn eval_value(&self, f: FunctionRef, reads: &[Value], params: &[Value]) -> Result<Value, CoreError> {
        let e = self.body(f, FunctionKind::Value)?;
        busy_wait(e.cost);
        match &e.body {
            UdfBody::Value(g) => Ok(g(reads, params)),
            _ => unreachable!(),
        }
    }

    pub fn eval_condition(&self, f: FunctionRef, reads: &[Value], params: &[Value]) -> Result<bool, CoreError> {
        match &self.body(f, FunctionKind::Condition)?.body {
            UdfBody::Condition(g) => Ok(g(reads, params)),
            _ => unreachable!(),
        }
    }

    pub fn eval_window(&self, f: FunctionRef, values: &[Value], params: &[Value]) -> Result<Value, CoreError> {
        let e = self.body(f, FunctionKind::WindowAggregate)?;
        busy_wait(e.cost);
        match &e.body {
            UdfBody::WindowAggregate(g) => Ok(g(values, params)),
            _ => unreachable!(),
        }
    }

    pub fn eval_selector(&self, f: FunctionRef, params: &[Value], key_space: u64) -> Result<Vec<Key>, CoreError> {
        match &self.body(f, FunctionKind::KeySelector)?.body {
            UdfBody::KeySelector(g) => Ok(g(params, key_space)),
            _ => unreachable!(),
        }
    }
}

/// Spins for `d`. A sleeping thread would free its core, which is not what a
/// compute-heavy function does.
pub fn busy_wait(d: Duration) {
    if d.is_zero() {
        return;
    }
    let start = Instant::now();
    while start.elapsed() < d {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_registration_gets_index_zero() {
        let mut r = UdfRegistry::new();
        let f = r
            .register("debit", 1, 0, UdfBody::value(|reads, p| reads[0] - p[0]))
            .unwrap();
        assert_eq!(f.id, 0);
        assert_eq!(f.kind, FunctionKind::Value);
        let g = r
            .register("has_funds", 1, 0, UdfBody::condition(|reads, p| reads[0] >= p[0]))
            .unwrap();
        assert_eq!(g.id, 1);
        assert_eq!(g.kind, FunctionKind::Condition);
        assert_eq!(r.eval_value(f, &[100], &[60]).unwrap(), 40);
        assert!(!r.eval_condition(g, &[100], &[150]).unwrap());
    }

    #[test]
    fn unregistered_id_is_an_error() {
        let r = UdfRegistry::new();
        assert_eq!(r.resolve(0), Err(CoreError::UnknownFunction(0)));
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut r = UdfRegistry::new();
        r.register("f", 0, 0, UdfBody::value(|_, _| 0)).unwrap();
        assert!(matches!(
            r.register("f", 0, 0, UdfBody::value(|_, _| 1)),
            Err(CoreError::DuplicateFunction(_))
        ));
    }

    #[test]
    fn kind_mismatch_detected() {
        let mut r = UdfRegistry::new();
        let f = r.register("f", 0, 0, UdfBody::value(|_, _| 0)).unwrap();
        assert!(r.eval_condition(f, &[], &[]).is_err());
    }

    #[test]
    fn busy_wait_occupies_at_least_cost() {
        let start = Instant::now();
        busy_wait(Duration::from_micros(200));
        assert!(start.elapsed() >= Duration::from_micros(200));
    }
}
