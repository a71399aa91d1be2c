"""hjbctrl: neural optimal control with HJB-derived training losses.

Submodules:
    diffkit   reverse-mode autodiff kernel (tensors, tape, grad)
    netzoo    MLP families (sine dynamics net, tanh-box controller, value net)
    dynzoo    analytic benchmark systems, costs, datasets
    optim     Adam and learning-rate schedules
    sysid     Sobolev system identification and the activation ablation
    rollout   differentiable fixed-step RK4 closed-loop simulation
    hjbtrain  joint controller/value training from HJB losses
    cli       command-line front end (sysid / train / eval / rollout)
"""

__version__ = "0.1.0"
