"""Tests for the configuration manager."""

import pytest

from models.runtime import ConnectorType, InterceptorKind, InterceptorSpec
from models.tactics import AddBinding, AddConnector, ForEachInBinding, ForEachOutBinding
from services.configuration import ConfigurationManager, apply_to_table
from services.context_store import context_from_runtime
from services.simulator import init_sim
from services.tactics import instantiate
from services.transform import transform, verify_causal_connection
from tests.factories import build, document, emergency, provider, sel, seq, service, svc
from utils.errors import DanglingReference, DuplicateBinding, NotFoundError


def manager_for(model):
    runtime = transform(model)
    sim = init_sim(runtime, model.scenario)
    providers = {p.provider_id: p for s in model.service_catalog for p in s.providers}
    return ConfigurationManager(runtime, context_from_runtime(runtime), sim, providers), runtime, sim


def test_replace_keeps_branch_position():
    """Replacing a selection branch keeps its place in the SelOut list."""
    model = build(document(
        sel([0.5, 0.5], svc("a"), svc("b")),
        [service("a"), service("b"), service("c", provider("pc"))],
    ))
    manager, runtime, sim = manager_for(model)
    tactic = instantiate("replace", ["root.0.SC:a", "standby.SC:c#pc"], manager.ctx)
    manager.enact([tactic.batch])
    assert runtime.table.outs["root.SelOut"] == ["standby.SC:c#pc", "root.1.SC:b"]
    assert sim.table.outs["root.SelOut"] == ["standby.SC:c#pc", "root.1.SC:b"]
    assert manager.ctx.out_bindings("standby.SC:c#pc") == ["root.SelIn"]
    assert runtime.table.out_bindings("root.0.SC:a") == []


def test_enact_is_all_or_nothing():
    """A failing batch leaves runtime, context and simulator as they were."""
    manager, runtime, sim = manager_for(emergency())
    runtime_before = runtime.to_dict()
    ctx_before = manager.ctx.to_dict()
    good = instantiate("skip", ["root.1.SC:identify_call_number"], manager.ctx).batch
    bad = (AddBinding("root.0.SC:receive_call", "nowhere"),)
    with pytest.raises(DanglingReference):
        manager.enact([good, bad])
    assert runtime.to_dict() == runtime_before
    assert manager.ctx.to_dict() == ctx_before
    assert verify_causal_connection(runtime, sim) == []
    assert manager.enactments == 0


def test_successive_enactments():
    """Each enactment starts from the result of the previous one."""
    manager, runtime, sim = manager_for(emergency())
    first = instantiate("skip", ["root.1.SC:identify_call_number"], manager.ctx)
    actions = manager.enact([first.batch])
    second = instantiate("skip", ["root.2.0.SC:find_position_by_id"], manager.ctx)
    manager.enact([second.batch])

    assert manager.enactments == 2
    assert actions[0]["action"] == "AddConnector"
    assert first.bindings["C"] == "tactic.C#1"
    assert second.bindings["C"] == "tactic.C#2"
    assert runtime.table.out_bindings("root.1.BlockStart") == ["tactic.C#1"]
    assert runtime.table.out_bindings("root.2.BlockStart") == ["tactic.C#2"]
    assert verify_causal_connection(runtime, sim) == []


def test_empty_enactment():
    """Enacting nothing changes nothing."""
    manager, runtime, sim = manager_for(emergency())
    before = runtime.to_dict()
    assert manager.enact([]) == []
    assert runtime.to_dict() == before


def test_apply_to_table_positions():
    """Redirected in-bindings keep their slot; moved out-bindings are appended."""
    runtime = transform(build(document(seq(svc("a"), svc("b")), [service("a"), service("b")])))
    table = runtime.table
    batch = (
        AddConnector("k", ConnectorType.SIMPLE),
        ForEachInBinding("root.1.SC:b", "k"),
        ForEachOutBinding("root.1.SC:b", "k"),
        AddBinding("k", "root.1.SC:b"),
    )
    work = apply_to_table(table, batch)
    assert work.outs["root.SeqOut.0"] == ["k"]
    assert work.outs["k"] == ["root.BlockEnd", "root.1.SC:b"]
    assert table.outs["root.SeqOut.0"] == ["root.1.SC:b"]

    with pytest.raises(DuplicateBinding):
        apply_to_table(table, (AddBinding("root.SeqOut.0", "root.1.SC:b"),))


def test_interceptor_management():
    """Interceptors are placed and removed on both the runtime model and the simulator."""
    manager, runtime, sim = manager_for(emergency())
    spec = InterceptorSpec("watch", "root.2.BlockEnd", "CP:rt_geo", (InterceptorKind.BLOCK_EXIT,))
    manager.install_interceptor(spec)
    assert spec in runtime.connectors["root.2.BlockEnd"].installed_interceptors
    assert spec in sim.table.connectors["root.2.BlockEnd"].installed_interceptors
    assert verify_causal_connection(runtime, sim) == []

    assert manager.uninstall_interceptor("watch") == spec
    assert verify_causal_connection(runtime, sim) == []

    with pytest.raises(NotFoundError):
        manager.install_interceptor(InterceptorSpec("x", "nowhere", "CP:rt_geo", (InterceptorKind.BLOCK_EXIT,)))
    with pytest.raises(NotFoundError):
        manager.uninstall_interceptor("watch")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
