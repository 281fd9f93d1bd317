# ABOUTME: Structured overlays studied under churn: CAN zones and Pastry routing state.
# ABOUTME: Join and repair run as contiguous action blocks built by each model.
