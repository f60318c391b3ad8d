"""Desk-scale sensor-language pipeline.

Submodules:
    ingest     readers for raw IMU recordings and dataset manifests
    signal     trimming, decimation, windowing, normalization, text serialization
    features   per-channel statistical and spectral features
    nn         shared numpy layers, Adam, checkpoint I/O
    encoder    masked-reconstruction sensor encoder
    fusion     projection of sensor embeddings into LM space and prefix fusion
    tokenizer  byte-fallback subword tokenizer
    lm         toy causal language model, LoRA adapters, fine-tuning
    promptgen  caption/QA prompt construction and QA parsing
    judge      rubric scoring, aggregation, inter-rater agreement
    harness    zero-shot classification prompts, parsing, metrics
    llmclient  provider-agnostic text generation client with disk cache
    sweep      hyperparameter sweep driver and report writer
    synth      synthetic IMU corpora for tests and demos
    cli        command-line entry point
"""

__version__ = "0.1.0"
