#!/usr/bin/env python3
"""
检测器类别扩展工具启动脚本
"""

import sys
from pathlib import Path

# 将src目录添加到Python路径
project_root = Path(__file__).parent
src_path = project_root / "src"
sys.path.insert(0, str(src_path))

from detector_extension.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
