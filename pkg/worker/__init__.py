# Worker package: per-sequence jobs on a joblib process pool
