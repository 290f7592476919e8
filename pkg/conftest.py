"""Configure Django so pytest can collect the apps' Django test cases."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'Kemeny.settings')
django.setup()
