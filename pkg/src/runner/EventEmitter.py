import threading


class EventEmitter:
    """
    Publish/subscribe hub for progress events of mapping, sharded updates and
    benchmarks. Producers emit without knowing who listens; the CLI subscribes
    a console printer when run with --verbose.

    Events:
      layer_done(layer, kind)
      gradient_sync(step, n_workers, payload_bytes)
      minibatch_load(index, resident)
      minibatch_store(index, resident)
      bench_row(record)
      suite_done(result)
    """

    def __init__(self):
        self._events = {}
        self._lock = threading.Lock()

    def on(self, event, callback):
        with self._lock:
            self._events.setdefault(event, []).append(callback)
        return self

    def once(self, event, callback):
        def one_time_callback(*args, **kwargs):
            self.off(event, one_time_callback)
            callback(*args, **kwargs)

        return self.on(event, one_time_callback)

    def emit(self, event, *args, **kwargs):
        with self._lock:
            callbacks = list(self._events.get(event, []))
        for callback in callbacks:
            callback(*args, **kwargs)
        return self

    def off(self, event, callback=None):
        with self._lock:
            if event in self._events:
                if callback:
                    self._events[event] = [cb for cb in self._events[event] if cb != callback]
                else:
                    self._events[event] = []
        return self

    def listeners(self, event):
        with self._lock:
            return list(self._events.get(event, []))

    def event_names(self):
        with self._lock:
            return list(self._events.keys())


event_emitter = EventEmitter()
