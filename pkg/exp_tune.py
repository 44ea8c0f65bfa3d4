# Scratch experiment: tune the default scenario (delete before finishing).
import sys
import time

import numpy as np

import gridloop.netmodel as nm
from gridloop.ofo import curtailment_cost
from gridloop.sim import (Scenario, build_area_controllers,
                          global_output_constraints, run_closed_loop,
                          scenario_from_dict)

BUS_AREA = {
    '1': 1, '2': 1, '3': 1, '4': 1, '5': 1, '6': 1, '7': 1, '8': 1, '9': 1,
    '11': 1, '28': 1,
    '12': 2, '13': 2, '14': 2, '15': 2, '16': 2, '17': 2, '18': 2, '19': 2,
    '20': 2, '23': 2,
    '10': 3, '21': 3, '22': 3, '24': 3, '25': 3, '26': 3, '27': 3, '29': 3,
    '30': 3,
}


def make_scn(rho, cost_map, cost_q, limits, horizon=30000.0, vmin_relax=None,
             q_range=None):
    doc = {
        'case': {'builtin': 'case30.m'},
        'partition': {'bus_area': BUS_AREA},
        'controllers': {'mode': 'multiarea', 'rho': rho, 'gamma': 'auto',
                        'mu_samples': 60, 'mu_seed': 1, 'mu_box': 0.3},
        'limits': {'branch_current': limits},
        'run': {'sampling_period': 10.0, 'horizon': horizon,
                'stop_at_steady': True, 'steady_residual': 1e-6},
    }
    scn = scenario_from_dict(doc)
    gens = list(scn.case.generators)
    for i, g in enumerate(gens):
        if g.controllable:
            qr = q_range.get(g.bus, (g.q_min, g.q_max)) if q_range else (g.q_min, g.q_max)
            gens[i] = nm.Generator(
                bus=g.bus, p_set=g.p_set, q_set=g.q_set, p_min=g.p_min,
                p_max=g.p_max, q_min=qr[0], q_max=qr[1], v_set=g.v_set,
                controllable=True, p_available=g.p_available,
                cost_curtail=cost_map[g.bus], cost_q=cost_q)
    buses = list(scn.case.buses)
    if vmin_relax:
        for i, b in enumerate(buses):
            buses[i] = nm.Bus(id=b.id, kind=b.kind, p_load=b.p_load,
                              q_load=b.q_load, shunt_g=b.shunt_g,
                              shunt_b=b.shunt_b, v_min=vmin_relax,
                              v_max=b.v_max, base_kv=b.base_kv)
    case2 = nm.GridCase(base_mva=scn.case.base_mva, buses=tuple(buses),
                        branches=scn.case.branches, generators=tuple(gens))
    return Scenario(case=case2, partition=scn.partition,
                    controllers=scn.controllers, schedule=scn.schedule,
                    run=scn.run, config_echo=scn.config_echo)


def report(scn, log, name):
    c, d = global_output_constraints(scn.case)
    viol = c @ log.y[-1] - d
    worst = np.argsort(viol)[-4:][::-1]
    print(f'{name}: periods={log.n_periods()} steady={log.steady_at} '
          f'mu={log.mu_hat:.3g}')
    print(f'  residual {log.residual[-1]:.2e} maxviol {log.max_violation[-1]:.4f} '
          f'social {log.social_cost[-1]:.3f} areas {np.round(log.area_costs[-1], 3)}')
    labels = []
    n_bus = scn.case.n_bus
    for r in worst:
        g = int(np.argmax(np.abs(c[r])))
        if g < n_bus:
            labels.append(f'v(bus {scn.case.buses[g].id})={log.y[-1][g]:.4f} viol {viol[r]:+.4f}')
        else:
            br = scn.case.branches[g - n_bus]
            labels.append(f'i({br.from_bus}-{br.to_bus})={log.y[-1][g]:.4f} viol {viol[r]:+.4f}')
    print('  worst rows:', '; '.join(labels))
    print('  P MW:', (log.u[-1, 0::2] * 100).round(1), ' Q:',
          (log.u[-1, 1::2] * 100).round(1))
    ctrls = build_area_controllers(scn)
    cc = [curtailment_cost(cc_.cost, log.u[-1][cc_.input_slice]) for cc_ in ctrls]
    print('  curtail costs', np.round(cc, 3), 'total %.3f' % sum(cc))
    return sum(cc)


if __name__ == '__main__':
    rho = float(sys.argv[1]) if len(sys.argv) > 1 else 5e4
    cost_map = {7: 0.002, 19: 0.0008, 30: 0.004}
    t0 = time.time()
    scn = make_scn(rho, cost_map, 0.01, {'9': 0.15, '14': 0.10})
    log = run_closed_loop(scn, mode='multiarea')
    cm = report(scn, log, 'multi')
    logc = run_closed_loop(scn, mode='centralized')
    cc = report(scn, logc, 'central')
    print('ratio %.2f  (%.1fs)' % (cm / cc, time.time() - t0))
