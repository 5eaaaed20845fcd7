"""快速验证测试

简单验证所有模块是否正常工作
"""

import sys
import os

# 添加 src 目录到 Python 路径
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

def main():
    print("\n" + "="*60)
    print("快速验证测试")
    print("="*60)

    tests = [
        ("张量引擎", "from core.tensor import Tensor, backward; x = Tensor([2.0], requires_grad=True); backward((x * x).sum()); assert x.grad[0] == 4.0"),
        ("交通图", "from core.graph import build_adjacency; import math; a = build_adjacency([(0, 1, 1.0)], 2, sigma=1.0, threshold=0.0); assert abs(a[0, 1] - math.exp(-1)) < 1e-15"),
        ("SPAE", "from core.spae import init_spae; s = init_spae(4, 8); assert s.table.shape == (4, 8) and s.table.data[0, 1] == 1.0"),
        ("模型配置", "from core.model import ModelConfig; c = ModelConfig(num_nodes=5, layers=4, channels=8, diffusion_depth=1, heads=2); assert c.receptive_field == 7"),
        ("数据切分", "from core.training import chronological_split; s = chronological_split(100); assert (s.train, s.val, s.test) == (range(0, 60), range(60, 80), range(80, 100))"),
        ("评估指标", "from core.metrics import compute_metrics; r = compute_metrics([2.0, 4.0], [1.0, 2.0]); assert r.overall.mae == 1.5"),
        ("实用工具", "from common.utilities import MathUtils; import numpy as np; assert MathUtils.resultant_length(np.array([0.0, 0.0])) == 1.0"),
        ("命令管理器", "from harness.command_manager import get_command_manager; assert len(get_command_manager().get_command_names()) == 5"),
    ]

    passed = 0
    for name, code in tests:
        try:
            exec(code)
            print(f"✅ {name}")
            passed += 1
        except Exception as e:
            print(f"❌ {name}: {str(e)}")

    print(f"\n总计: {passed}/{len(tests)} 个模块通过")
    if passed == len(tests):
        print("🎉 所有模块正常工作！")
    else:
        print(f"⚠️  {len(tests)-passed} 个模块有问题")

if __name__ == "__main__":
    main()
