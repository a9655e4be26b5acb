"""The masked shape prediction pretext task: model, targets, losses, training."""
