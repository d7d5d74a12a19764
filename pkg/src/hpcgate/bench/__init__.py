"""Load-generation harness: staged workloads, ramped clients, latency
reports, and the pooled vs non-pooled download comparison."""
