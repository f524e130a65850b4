use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::Value;

use super::{MicroserviceDescriptor, MicroserviceTemplate, ServiceError, ServiceState};

/// Queue depth above which the monitor halts an instance that has a
/// running sibling.
pub const DEFAULT_HALT_DEPTH: u32 = 64;

/// An in-process microservice. Inputs are the step's wired values.
pub trait Microservice: Send + Sync {
    fn call(&self, inputs: &BTreeMap<String, Value>) -> Result<Value, String>;
}

pub struct FnService<F>(pub F);

impl<F> Microservice for FnService<F>
where
    F: Fn(&BTreeMap<String, Value>) -> Result<Value, String> + Send + Sync,
{
    fn call(&self, inputs: &BTreeMap<String, Value>) -> Result<Value, String> {
        (self.0)(inputs)
    }
}

/// Builds a handler from a template's resolved parameters.
pub type ServiceFactory = Arc<dyn Fn(&BTreeMap<String, Value>) -> Arc<dyn Microservice> + Send + Sync>;

struct Instance {
    desc: MicroserviceDescriptor,
    handler: Arc<dyn Microservice>,
    params: BTreeMap<String, Value>,
}

#[derive(Default)]
struct Inner {
    instances: BTreeMap<String, Instance>,
    templates: BTreeMap<String, (MicroserviceTemplate, ServiceFactory)>,
    next_serial: BTreeMap<String, u64>,
    transitions: Vec<(String, ServiceState, ServiceState)>,
}

impl Inner {
    fn running(&self, kind: &str) -> Vec<&MicroserviceDescriptor> {
        let mut v: Vec<&MicroserviceDescriptor> = self
            .instances
            .values()
            .map(|i| &i.desc)
            .filter(|d| d.kind == kind && d.state == ServiceState::Running)
            .collect();
        v.sort_by(|a, b| (a.load_queue_depth, &a.id).cmp(&(b.load_queue_depth, &b.id)));
        v
    }

    fn instance(&mut self, id: &str) -> Result<&mut Instance, ServiceError> {
        self.instances.get_mut(id).ok_or_else(|| ServiceError::UnknownService(id.to_owned()))
    }

    fn transition(&mut self, id: &str, to: ServiceState) -> Result<MicroserviceDescriptor, ServiceError> {
        let inst = self.instance(id)?;
        let from = inst.desc.state;
        if !from.can_transition(to) {
            return Err(ServiceError::IllegalTransition { id: id.to_owned(), from, to });
        }
        inst.desc.state = to;
        let desc = inst.desc.clone();
        self.transitions.push((id.to_owned(), from, to));
        Ok(desc)
    }

    fn instantiate(
        &mut self,
        kind: &str,
        params: &BTreeMap<String, Value>,
    ) -> Result<MicroserviceDescriptor, ServiceError> {
        let (template, factory) =
            self.templates.get(kind).ok_or_else(|| ServiceError::NoTemplate(kind.to_owned()))?;
        let resolved = template.resolve_params(params)?;
        if template.singleton && self.instances.values().any(|i| i.desc.kind == kind && i.desc.state.is_live()) {
            return Err(ServiceError::SingletonExists(kind.to_owned()));
        }
        let handler = factory(&resolved);
        let template_id = template.template_id.clone();
        let domain_scope = template.domain_scope.clone();
        let serial = self.next_serial.entry(kind.to_owned()).or_insert(0);
        let id = loop {
            *serial += 1;
            let id = format!("{kind}#{serial}");
            if !self.instances.contains_key(&id) {
                break id;
            }
        };
        let desc = MicroserviceDescriptor {
            endpoint: format!("/services/{id}"),
            id: id.clone(),
            kind: kind.to_owned(),
            state: ServiceState::Registered,
            template_id,
            load_queue_depth: 0,
            domain_scope,
        };
        self.instances.insert(id.clone(), Instance { desc, handler, params: resolved });
        self.transition(&id, ServiceState::Running)
    }
}

/// The microservice registry. All mutations are serialized through one
/// lock; reads see a consistent snapshot.
pub struct Repository {
    inner: Mutex<Inner>,
    halt_depth: u32,
}

impl Default for Repository {
    fn default() -> Self {
        Repository::new()
    }
}

impl Repository {
    pub fn new() -> Self {
        Repository { inner: Mutex::new(Inner::default()), halt_depth: DEFAULT_HALT_DEPTH }
    }

    pub fn with_halt_depth(mut self, depth: u32) -> Self {
        self.halt_depth = depth;
        self
    }

    pub fn halt_depth(&self) -> u32 {
        self.halt_depth
    }

    /// Adds or replaces the template for `template.kind`.
    pub fn add_template(&self, template: MicroserviceTemplate, factory: ServiceFactory) {
        self.inner.lock().templates.insert(template.kind.clone(), (template, factory));
    }

    pub fn remove_template(&self, kind: &str) -> Option<MicroserviceTemplate> {
        self.inner.lock().templates.remove(kind).map(|(t, _)| t)
    }

    pub fn templates(&self) -> Vec<MicroserviceTemplate> {
        self.inner.lock().templates.values().map(|(t, _)| t.clone()).collect()
    }

    /// Adds a hand-built instance in state Registered.
    pub fn register(
        &self,
        id: &str,
        kind: &str,
        handler: Arc<dyn Microservice>,
    ) -> Result<MicroserviceDescriptor, ServiceError> {
        let mut inner = self.inner.lock();
        if inner.instances.contains_key(id) {
            return Err(ServiceError::DuplicateService(id.to_owned()));
        }
        let desc = MicroserviceDescriptor {
            id: id.to_owned(),
            kind: kind.to_owned(),
            endpoint: format!("/services/{id}"),
            state: ServiceState::Registered,
            template_id: String::new(),
            load_queue_depth: 0,
            domain_scope: Default::default(),
        };
        inner.instances.insert(id.to_owned(), Instance { desc: desc.clone(), handler, params: BTreeMap::new() });
        Ok(desc)
    }

    pub fn instantiate(
        &self,
        kind: &str,
        params: &BTreeMap<String, Value>,
    ) -> Result<MicroserviceDescriptor, ServiceError> {
        self.inner.lock().instantiate(kind, params)
    }

    /// Moves an instance to Running or Halted. Halting the last running
    /// instance of a kind is refused.
    pub fn set_lifecycle(&self, id: &str, target: ServiceState) -> Result<MicroserviceDescriptor, ServiceError> {
        let mut inner = self.inner.lock();
        let (kind, from) = {
            let inst = inner.instance(id)?;
            (inst.desc.kind.clone(), inst.desc.state)
        };
        match target {
            ServiceState::Running | ServiceState::Halted => {}
            to => return Err(ServiceError::IllegalTransition { id: id.to_owned(), from, to }),
        }
        if target == ServiceState::Halted && from == ServiceState::Running && inner.running(&kind).len() == 1 {
            return Err(ServiceError::LastRunningInstance(id.to_owned()));
        }
        inner.transition(id, target)
    }

    /// Marks an instance Failed. If that leaves its kind with no running
    /// instance and a template exists, a replacement is instantiated with
    /// the failed instance's parameters and returned.
    pub fn kill(&self, id: &str) -> Result<Option<MicroserviceDescriptor>, ServiceError> {
        let mut inner = self.inner.lock();
        let desc = inner.transition(id, ServiceState::Failed)?;
        let had_template = inner.templates.contains_key(&desc.kind);
        if !inner.running(&desc.kind).is_empty() || !had_template {
            return Ok(None);
        }
        let params = inner.instances[id].params.clone();
        let params = if desc.template_id.is_empty() { BTreeMap::new() } else { params };
        log::info!("reinstantiating {} after failure of {id}", desc.kind);
        inner.instantiate(&desc.kind, &params).map(Some)
    }

    pub fn set_load(&self, id: &str, depth: u32) -> Result<(), ServiceError> {
        self.inner.lock().instance(id)?.desc.load_queue_depth = depth;
        Ok(())
    }

    /// Running instances of `kind`, least loaded first, ties by id.
    pub fn discover(&self, kind: &str) -> Vec<MicroserviceDescriptor> {
        self.inner.lock().running(kind).into_iter().cloned().collect()
    }

    pub fn descriptor(&self, id: &str) -> Option<MicroserviceDescriptor> {
        self.inner.lock().instances.get(id).map(|i| i.desc.clone())
    }

    pub fn descriptors(&self) -> Vec<MicroserviceDescriptor> {
        self.inner.lock().instances.values().map(|i| i.desc.clone()).collect()
    }

    /// Every state change so far, in order.
    pub fn transitions(&self) -> Vec<(String, ServiceState, ServiceState)> {
        self.inner.lock().transitions.clone()
    }

    /// One pass of the load monitor. Instances deeper than the halt depth
    /// are halted, deepest first, while a sibling keeps running. Halted
    /// instances resume once every running sibling is below half the halt
    /// depth and their own depth is at most the halt depth. Returns the
    /// changes made.
    pub fn monitor_tick(&self) -> Vec<(String, ServiceState)> {
        let h = self.halt_depth;
        let mut inner = self.inner.lock();
        let mut changes = Vec::new();
        let mut kinds: Vec<String> = inner.instances.values().map(|i| i.desc.kind.clone()).collect();
        kinds.dedup();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let mut loaded: Vec<(u32, String)> = inner
                .running(&kind)
                .iter()
                .filter(|d| d.load_queue_depth > h)
                .map(|d| (d.load_queue_depth, d.id.clone()))
                .collect();
            loaded.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            let mut halted_now = Vec::new();
            for (_, id) in loaded {
                if inner.running(&kind).len() > 1 && inner.transition(&id, ServiceState::Halted).is_ok() {
                    changes.push((id.clone(), ServiceState::Halted));
                    halted_now.push(id);
                }
            }
            let calm = inner.running(&kind).iter().all(|d| d.load_queue_depth < h / 2);
            if !calm {
                continue;
            }
            let resumable: Vec<String> = inner
                .instances
                .values()
                .map(|i| &i.desc)
                .filter(|d| d.kind == kind && d.state == ServiceState::Halted && d.load_queue_depth <= h)
                .filter(|d| !halted_now.contains(&d.id))
                .map(|d| d.id.clone())
                .collect();
            for id in resumable {
                if inner.transition(&id, ServiceState::Running).is_ok() {
                    changes.push((id, ServiceState::Running));
                }
            }
        }
        changes
    }

    /// The least-loaded running instance of `kind`, instantiating from the
    /// template with default parameters when none is running.
    pub fn resolve(&self, kind: &str) -> Result<MicroserviceDescriptor, ServiceError> {
        let mut inner = self.inner.lock();
        if let Some(d) = inner.running(kind).first() {
            return Ok((*d).clone());
        }
        match inner.instantiate(kind, &BTreeMap::new()) {
            Err(ServiceError::NoTemplate(_)) => Err(ServiceError::UnresolvableKind(kind.to_owned())),
            other => other,
        }
    }

    /// Calls the least-loaded running instance of `kind`. The outer error is
    /// a resolution failure; the inner one is the service's own failure.
    pub fn dispatch(
        &self,
        kind: &str,
        inputs: &BTreeMap<String, Value>,
    ) -> Result<(String, Result<Value, String>), ServiceError> {
        let desc = self.resolve(kind)?;
        let handler = self.inner.lock().instances[&desc.id].handler.clone();
        Ok((desc.id, handler.call(inputs)))
    }
}
