# ABOUTME: Message-passing protocols studied under churn: leader election and one-shot query.
# ABOUTME: Each module exposes a ProtocolModel subclass driven by the engine.
