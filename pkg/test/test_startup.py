"""启动诊断脚本 - 检查依赖与模块是否正常

直接运行: python -m test.test_startup
"""
import sys


def main() -> int:
    print("=" * 50)
    print("commkit - 启动诊断")
    print("=" * 50)

    # 1. Python 版本
    print(f"\n[1] Python 版本: {sys.version}")

    # 2. 依赖包
    print("\n[2] 检查依赖包...")
    packages = [
        ("numpy", "NumPy"),
        ("pandas", "pandas"),
        ("orjson", "orjson"),
        ("pytest", "pytest"),
        ("hypothesis", "Hypothesis"),
    ]
    all_ok = True
    for pkg_name, display_name in packages:
        try:
            module = __import__(pkg_name)
            version = getattr(module, "__version__", "unknown")
            print(f"   ✓ {display_name}: {version}")
        except ImportError as e:
            print(f"   ✗ {display_name}: 未安装 ({e})")
            all_ok = False
    if not all_ok:
        print("\n请运行: pip install -r requirements.txt")
        return 1

    # 3. 配置
    print("\n[3] 检查配置...")
    from commkit import config
    print(f"   错误策略: {config.ERROR_POLICY}")
    print(f"   死锁检测: {config.WATCHDOG_TIMEOUT or '关闭'}")
    print(f"   集合算法: {config.COLLECTIVE_ALGORITHM}")

    # 4. 模块导入
    print("\n[4] 测试模块导入...")
    modules = [
        "commkit.errors",
        "commkit.services.typemap",
        "commkit.services.buffers",
        "commkit.services.fabric",
        "commkit.services.trace",
        "commkit.services.bench_service",
        "commkit.api.comm",
        "commkit.api.collectives",
        "commkit.api.futures",
    ]
    for name in modules:
        try:
            __import__(name)
            print(f"   ✓ {name}")
        except Exception as e:
            print(f"   ✗ {name}: {e}")
            all_ok = False

    # 5. 两个 rank 的最小通信
    print("\n[5] 测试模拟网络...")
    try:
        from commkit import SUM, FabricConfig, spawn_world, world

        def rank_main(rank, fabric):
            with world(fabric) as comm:
                return comm.all_reduce(rank + 1, SUM)

        results = spawn_world(FabricConfig(world_size=2, watchdog_timeout=5.0), rank_main)
        print(f"   ✓ all_reduce: {results}")
    except Exception as e:
        print(f"   ✗ 模拟网络: {e}")
        all_ok = False

    print("\n" + "=" * 50)
    if all_ok:
        print("诊断完成！运行测试或基准:")
        print("  pytest")
        print("  python main.py --ranks 4 --max-exp 10")
    else:
        print("诊断发现问题，请检查上面的输出")
    print("=" * 50)
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
